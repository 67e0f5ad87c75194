from datetime import datetime

from sqlalchemy import Column, DateTime, Float, ForeignKey, Integer, String, Text, create_engine
from sqlalchemy.orm import declarative_base, relationship, sessionmaker

Base = declarative_base()


class RunRecord(Base):
    __tablename__ = 'runs'
    id_run = Column(Integer, primary_key=True, autoincrement=True)
    command = Column(String, nullable=False)
    run_dir = Column(String, nullable=False)
    config_hash = Column(String, nullable=False)
    model_fingerprint = Column(String)
    seed = Column(Integer, default=0)
    status = Column(String, nullable=False)  # (ok, config_error, obstruction, numerical_failure)
    exit_code = Column(Integer, nullable=False)
    error_code = Column(String, nullable=True)
    message = Column(Text, nullable=True)
    elapsed_seconds = Column(Float)
    created_at = Column(DateTime, default=datetime.utcnow)

    # Relationships
    artifacts = relationship("ArtifactRecord", back_populates="run", cascade="all, delete-orphan")

    def __repr__(self):
        return f"<RunRecord(command='{self.command}', status='{self.status}', exit_code={self.exit_code})>"


class ArtifactRecord(Base):
    __tablename__ = 'artifacts'
    id_artifact = Column(Integer, primary_key=True, autoincrement=True)
    id_run = Column(Integer, ForeignKey('runs.id_run', ondelete='CASCADE'), nullable=False)
    name = Column(String, nullable=False)
    kind = Column(String, nullable=False)  # (csv, json, npy)
    sha256 = Column(String, nullable=False)
    size = Column(Integer)

    # Relationships
    run = relationship("RunRecord", back_populates="artifacts")


def make_session_factory(database_url: str):
    engine = create_engine(database_url)
    return engine, sessionmaker(autocommit=False, autoflush=False, bind=engine)


def init_db(engine):
    Base.metadata.create_all(bind=engine)


def record_run(session, command: str, run_dir: str, config_hash: str, status: str, exit_code: int,
               artifacts=(), **fields) -> RunRecord:
    """Agrega una corrida y sus artefactos al registro y hace commit"""
    run = RunRecord(command=command, run_dir=run_dir, config_hash=config_hash, status=status,
                    exit_code=exit_code, **fields)
    for entry in artifacts:
        run.artifacts.append(ArtifactRecord(name=entry.name, kind=entry.kind, sha256=entry.sha256, size=entry.size))
    session.add(run)
    session.commit()
    return run
