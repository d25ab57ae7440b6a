"""Request/response bodies for the game API."""

from __future__ import annotations

from pydantic import BaseModel, Field


class CreateSessionRequest(BaseModel):
    role: str = Field(description="human_listener or human_speaker")
    n_rounds: int = Field(default=69, ge=1)
    seed: int = 0


class CreateSessionResponse(BaseModel):
    session_id: str
    role: str
    n_rounds: int


class ObjectView(BaseModel):
    slot: int
    object_id: str
    label: str
    image_url: str


class RoundView(BaseModel):
    round_index: int
    n_rounds: int
    role: str
    objects: list[ObjectView]
    utterance: str | None  # model utterance shown in human_listener rounds
    difficulty: str
    completed: int
    correct_so_far: int
    done: bool = False


class SessionDoneView(BaseModel):
    done: bool = True
    completed: int
    correct_so_far: int
    n_rounds: int


class SubmitRoundRequest(BaseModel):
    choice: int | None = None  # presented slot, human_listener role
    utterance: str | None = None  # human_speaker role
    latency_ms: float = 0.0


class SubmitRoundResponse(BaseModel):
    round_index: int
    correct: bool
    target_slot: int
    model_choice_slot: int | None = None  # human_speaker role
    done: bool


class SessionReport(BaseModel):
    session_id: str
    role: str
    n_rounds: int
    completed: int
    overall_accuracy: float | None
    hard_accuracy: float | None
    hard_count: int
    easy_accuracy: float | None
    easy_count: int
    done: bool


class AggregateBucket(BaseModel):
    accuracy: float | None
    count: int


class AggregateReport(BaseModel):
    n_sessions: int
    overall: AggregateBucket
    hard: AggregateBucket
    easy: AggregateBucket
