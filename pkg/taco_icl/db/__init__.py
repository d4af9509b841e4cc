"""
Database package for the TACO scorer response cache.
"""
# Import from connector
from taco_icl.db.connector import get_engine, get_session, init_db, close_db_connections

# Import from models
from taco_icl.db.models import Base, ScoreRecord

__all__ = ["Base", "ScoreRecord", "get_engine", "get_session", "init_db", "close_db_connections"]
