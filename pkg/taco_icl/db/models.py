"""
Database models for the TACO demonstration configurator.
"""
import datetime
from sqlalchemy import Column, DateTime, Float, Index, Integer, MetaData, String, Text
from sqlalchemy.orm import declarative_base

# Create base metadata with naming convention
naming_convention = {
    "ix": "ix_%(column_0_label)s",
    "uq": "uq_%(table_name)s_%(column_0_name)s",
    "ck": "ck_%(table_name)s_%(constraint_name)s",
    "pk": "pk_%(table_name)s"
}
metadata = MetaData(naming_convention=naming_convention)
Base = declarative_base(metadata=metadata)

class ScoreRecord(Base):
    """One cached scorer response, keyed by the hash of its request."""
    __tablename__ = 'score_cache'
    __table_args__ = (
        Index('ix_score_cache_scorer_kind', 'scorer', 'kind'),
        {'extend_existing': True}
    )

    request_hash = Column(String(64), primary_key=True)
    scorer = Column(String(100), nullable=False)    # e.g. 'synthetic', 'external'
    kind = Column(String(20), nullable=False)       # 'loglik' or 'label_probs'
    loglik = Column(Float)
    payload = Column(Text)                          # JSON label distribution for label_probs
    hits = Column(Integer, nullable=False, default=0)
    created_at = Column(DateTime, default=datetime.datetime.utcnow)

    def __repr__(self):
        return f"<ScoreRecord(hash='{self.request_hash[:12]}', kind='{self.kind}')>"
