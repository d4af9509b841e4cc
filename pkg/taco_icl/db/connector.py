"""
Database connector for the TACO demonstration configurator.
Handles SQLite connections for the scorer response cache using SQLAlchemy.
"""
from pathlib import Path
from typing import Dict, Union

from sqlalchemy import create_engine, event
from sqlalchemy.engine import Engine
from sqlalchemy.orm import Session, sessionmaker

from taco_icl.utils.config import get_absolute_path
from taco_icl.utils.logger import get_logger

# Import Base from models
from taco_icl.db.models import Base

# Create logger
logger = get_logger("db.connector")

# One engine and session factory per database file
_engines: Dict[str, Engine] = {}
_session_factories: Dict[str, sessionmaker] = {}

def get_connection_string(path: Union[str, Path]) -> str:
    """
    Get the SQLite connection string for a cache file.

    Args:
        path: Database file, relative paths resolve against the project root

    Returns:
        SQLAlchemy connection string
    """
    return f"sqlite:///{get_absolute_path(str(path))}"

def get_engine(path: Union[str, Path]) -> Engine:
    """
    Get the SQLAlchemy engine for a cache file.
    Creates a new engine if one doesn't exist.

    Args:
        path: Database file

    Returns:
        SQLAlchemy engine instance
    """
    key = str(get_absolute_path(str(path)))
    if key not in _engines:
        Path(key).parent.mkdir(parents=True, exist_ok=True)
        engine = create_engine(
            get_connection_string(path),
            connect_args={"check_same_thread": False},
        )

        @event.listens_for(engine, "connect")
        def _set_sqlite_pragma(dbapi_connection, connection_record):
            cursor = dbapi_connection.cursor()
            cursor.execute("PRAGMA journal_mode=WAL")
            cursor.close()

        _engines[key] = engine
        logger.info(f"Created database engine for {key}")
    return _engines[key]

def get_session(path: Union[str, Path]) -> Session:
    """
    Get a new database session.

    Args:
        path: Database file

    Returns:
        SQLAlchemy session
    """
    key = str(get_absolute_path(str(path)))
    if key not in _session_factories:
        _session_factories[key] = sessionmaker(bind=get_engine(path))
    return _session_factories[key]()

def init_db(path: Union[str, Path]) -> Engine:
    """
    Initialize the database by creating all tables.

    Args:
        path: Database file

    Returns:
        SQLAlchemy engine instance
    """
    engine = get_engine(path)
    Base.metadata.create_all(engine)
    logger.info(f"Initialized score cache tables in {path}")
    return engine

def close_db_connections():
    """
    Close all database connections.
    Call this when shutting down the application.
    """
    for engine in _engines.values():
        engine.dispose()
    _engines.clear()
    _session_factories.clear()
    logger.info("Closed all database connections")
