from typing import Optional

from pydantic import BaseModel


class UpdateRecord(BaseModel):
    step: int
    lr: float
    train_loss: float
    characters: int
    dev_loss: Optional[float] = None

    def metrics_line(self) -> str:
        dev = "-" if self.dev_loss is None else f"{self.dev_loss:.6f}"
        return f"{self.step}\t{self.lr:.6e}\t{self.train_loss:.6f}\t{dev}\n"


class TrainingSummary(BaseModel):
    updates: int
    epochs: int
    final_train_loss: Optional[float] = None
    best_dev_loss: Optional[float] = None
    best_checkpoint: Optional[str] = None
    last_checkpoint: Optional[str] = None
    stopped_early: bool = False
