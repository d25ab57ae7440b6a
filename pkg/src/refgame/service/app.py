"""FastAPI application over the game server. The target index is never sent
to the client before submission in listener mode; correctness is always the
server's verdict."""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.responses import Response
from fastapi.staticfiles import StaticFiles

from .game import GameError, GameServer
from .models import (AggregateReport, CreateSessionRequest,
                     CreateSessionResponse, ObjectView, RoundView,
                     SessionDoneView, SessionReport, SubmitRoundRequest,
                     SubmitRoundResponse)

_HTTP_STATUS = {"not_found": 404, "duplicate": 409, "bad_request": 400}


def _raise(err: GameError):
    raise HTTPException(status_code=_HTTP_STATUS[err.kind], detail=str(err))


def _label_card_svg(label: str) -> str:
    lines = label.split(", ")
    rows = "".join(
        f'<text x="150" y="{60 + 30 * i}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="20">{line}</text>'
        for i, line in enumerate(lines))
    return ('<svg xmlns="http://www.w3.org/2000/svg" width="300" '
            'height="220"><rect width="300" height="220" fill="#f4f1ea" '
            'stroke="#444"/>' + rows + "</svg>")


def create_app(server: GameServer, asset_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="reference game service")
    app.state.server = server

    if asset_dir is not None:
        app.mount("/assets", StaticFiles(directory=str(asset_dir)),
                  name="assets")

    def _image_url(object_id: str) -> str:
        if asset_dir is not None and (Path(asset_dir) / f"{object_id}.png").exists():
            return f"/assets/{object_id}.png"
        return f"/objects/{object_id}/card.svg"

    @app.post("/sessions", response_model=CreateSessionResponse)
    def create_session(req: CreateSessionRequest):
        try:
            session = server.create_session(role=req.role,
                                            n_rounds=req.n_rounds,
                                            seed=req.seed)
        except GameError as err:
            _raise(err)
        return CreateSessionResponse(session_id=session.session_id,
                                     role=session.role,
                                     n_rounds=len(session.rounds))

    @app.get("/sessions/{session_id}/round",
             response_model=RoundView | SessionDoneView)
    def current_round(session_id: str):
        try:
            session = server.get_session(session_id)
        except GameError as err:
            _raise(err)
        correct = sum(r.correct for r in session.results)
        if session.done:
            return SessionDoneView(completed=session.cursor,
                                   correct_so_far=correct,
                                   n_rounds=len(session.rounds))
        rnd = session.rounds[session.cursor]
        objects = [ObjectView(slot=slot, object_id=oid,
                              label=server.object_labels.get(oid, oid),
                              image_url=_image_url(oid))
                   for slot, oid in enumerate(rnd.presented_ids)]
        return RoundView(round_index=rnd.round_index,
                         n_rounds=len(session.rounds), role=session.role,
                         objects=objects, utterance=rnd.utterance,
                         difficulty=rnd.difficulty,
                         completed=session.cursor, correct_so_far=correct)

    @app.post("/sessions/{session_id}/rounds/{round_index}",
              response_model=SubmitRoundResponse)
    def submit_round(session_id: str, round_index: int,
                     req: SubmitRoundRequest):
        try:
            record = server.submit_round(session_id, round_index,
                                         req.model_dump(exclude_none=True))
        except GameError as err:
            _raise(err)
        session = server.get_session(session_id)
        model_slot = (record.presented_choice
                      if session.role == "human_speaker" else None)
        return SubmitRoundResponse(
            round_index=record.round_index, correct=record.correct,
            target_slot=record.permutation.index(
                session.rounds[round_index].target_index),
            model_choice_slot=model_slot, done=session.done)

    @app.get("/sessions/{session_id}/report", response_model=SessionReport)
    def session_report(session_id: str):
        try:
            return SessionReport(**server.session_report(session_id))
        except GameError as err:
            _raise(err)

    @app.get("/report", response_model=AggregateReport)
    def aggregate_report():
        return AggregateReport(**server.aggregate_report())

    @app.get("/objects/{object_id}/card.svg")
    def object_card(object_id: str):
        label = server.object_labels.get(object_id)
        if label is None:
            raise HTTPException(status_code=404,
                                detail=f"unknown object {object_id}")
        return Response(content=_label_card_svg(label),
                        media_type="image/svg+xml")

    return app
