"""
Run-ledger database setup.

The ledger is an append-only SQLite file inside the output directory.
"""
from pathlib import Path
from typing import Iterator, Union

from sqlalchemy import create_engine
from sqlalchemy.engine import Engine
from sqlalchemy.orm import Session, declarative_base, sessionmaker

Base = declarative_base()

LEDGER_NAME = "ledger.sqlite"


def get_ledger_url(out_dir: Union[str, Path]) -> str:
    """SQLite URL of the ledger inside ``out_dir``."""
    return f"sqlite:///{Path(out_dir) / LEDGER_NAME}"


def get_engine(out_dir: Union[str, Path]) -> Engine:
    """Create the ledger engine and its tables."""
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    # SQLite requires connect_args for check_same_thread
    engine = create_engine(get_ledger_url(out_dir), connect_args={"check_same_thread": False})
    Base.metadata.create_all(bind=engine)
    return engine


def get_session_local(engine: Engine) -> sessionmaker:
    return sessionmaker(autocommit=False, autoflush=False, bind=engine)


def get_session(out_dir: Union[str, Path]) -> Iterator[Session]:
    """
    Yield a ledger session and close it afterwards.

    Usage: ``session = next(get_session(out_dir))`` or as a context generator.
    """
    engine = get_engine(out_dir)
    session = get_session_local(engine)()
    try:
        yield session
    finally:
        session.close()
        engine.dispose()
