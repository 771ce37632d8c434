import logging
import uuid
from datetime import datetime, timedelta
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field

from config import settings
from models import CateModel

logger = logging.getLogger(__name__)


class RegisteredModel(BaseModel):
    """A fitted model held by the service"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    model_id: str
    model: CateModel
    created: datetime = Field(default_factory=datetime.utcnow)
    last_used: datetime = Field(default_factory=datetime.utcnow)
    predictions: int = 0


class ModelRegistry:
    """
    In-memory store of uploaded models.
    Models unused for longer than the TTL are dropped on the next access.
    """

    def __init__(self, ttl_minutes: Optional[int] = None):
        self.models: Dict[str, RegisteredModel] = {}
        self.ttl_minutes = ttl_minutes if ttl_minutes is not None else settings.model_ttl_minutes

    def register(self, model: CateModel) -> RegisteredModel:
        self._cleanup_expired()
        entry = RegisteredModel(model_id=uuid.uuid4().hex[:12], model=model)
        self.models[entry.model_id] = entry
        logger.info("Registered %s model %s", model.kind.value, entry.model_id)
        return entry

    def get(self, model_id: str) -> Optional[RegisteredModel]:
        """Look up a model and mark it used"""
        self._cleanup_expired()
        entry = self.models.get(model_id)
        if entry is not None:
            entry.last_used = datetime.utcnow()
        return entry

    def record_prediction(self, model_id: str) -> None:
        entry = self.models.get(model_id)
        if entry is not None:
            entry.predictions += 1

    def remove(self, model_id: str) -> bool:
        return self.models.pop(model_id, None) is not None

    def list_ids(self) -> List[str]:
        self._cleanup_expired()
        return list(self.models)

    def _cleanup_expired(self):
        """Remove models that haven't been used recently"""
        cutoff = datetime.utcnow() - timedelta(minutes=self.ttl_minutes)

        expired = [model_id for model_id, entry in self.models.items() if entry.last_used < cutoff]

        for model_id in expired:
            logger.info("Model %s expired", model_id)
            self.models.pop(model_id, None)
