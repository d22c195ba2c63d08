"""
SQLAlchemy models of the run ledger.
"""
import uuid

from sqlalchemy import Boolean, Column, DateTime, Float, ForeignKey, Integer, JSON, String, Uuid, func
from sqlalchemy.orm import relationship

from bdlab.database import Base


class RunRecord(Base):
    """
    One executed scenario.

    Attributes:
        id: UUID primary key
        scenario: Scenario tag
        config_hash: SHA-256 of the canonical config JSON
        seed: Generator seed
        passed: Whether every certification held
        scalars: Summary scalars (JSON)
        created_at: Timestamp of the ledger entry
    """
    __tablename__ = "runs"

    id = Column(Uuid(as_uuid=True), primary_key=True, default=uuid.uuid4, index=True)
    scenario = Column(String(20), nullable=False, index=True)
    config_hash = Column(String(64), nullable=False, index=True)
    seed = Column(Integer, nullable=False)
    passed = Column(Boolean, nullable=False)
    scalars = Column(JSON, nullable=False, default=dict)
    created_at = Column(DateTime, server_default=func.now(), nullable=False)

    def __repr__(self) -> str:
        return f"<RunRecord(id={self.id}, scenario={self.scenario}, passed={self.passed})>"


class ConvergenceRecord(Base):
    """
    One row of a per-eps convergence table.

    Attributes:
        run_id: Foreign key to the run
        eps: Scale parameter
        t: Sample time on the rescaled clock
        distance: Dictionary distance to the LSW reference
        energy_gap: F^eps - E at t
        action_integral: int A^eps up to t
        dissipation_integral: int D^eps up to t
    """
    __tablename__ = "convergence"

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(Uuid(as_uuid=True), ForeignKey("runs.id"), nullable=False, index=True)
    eps = Column(Float, nullable=False)
    t = Column(Float, nullable=False)
    distance = Column(Float, nullable=True)
    energy_gap = Column(Float, nullable=True)
    action_integral = Column(Float, nullable=True)
    dissipation_integral = Column(Float, nullable=True)

    run = relationship("RunRecord", backref="convergence_rows")

    def __repr__(self) -> str:
        return f"<ConvergenceRecord(run_id={self.run_id}, eps={self.eps}, t={self.t}, distance={self.distance})>"
