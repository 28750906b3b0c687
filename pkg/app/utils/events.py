"""
Structured event log for auction runs.

Every scheduling attempt, acceptance, rejection, price update and batch start
becomes one record. Records are kept in memory for tests and the experiment
harness, mirrored to the ``app.events`` logger at DEBUG and can be written as
JSON lines.

Example:
    >>> from app.utils.events import EventLog
    >>> events = EventLog()
    >>> outcome = run_batch_auction(bids, config, events=events)
    >>> events.write_jsonl("run.events.jsonl")
"""

import json
import logging
from typing import Any, Dict, Iterable, List, Optional

logger = logging.getLogger("app.events")

EVENT_KINDS = ("batch", "schedule", "accept", "reject", "price_update")


class EventLog:
    """
    Append-only list of auction events.

    Attributes:
        records: Event dictionaries in emission order; each has ``seq`` and ``event`` keys
        context: Fields added to every record (e.g. run label, repetition)
    """

    def __init__(self, context: Optional[Dict[str, Any]] = None):
        self.records: List[Dict[str, Any]] = []
        self.context: Dict[str, Any] = dict(context or {})

    def emit(self, event: str, **fields: Any) -> Dict[str, Any]:
        """
        Record one event.

        Args:
            event: One of EVENT_KINDS
            **fields: JSON-serialisable event payload

        Returns:
            The stored record

        Raises:
            ValueError: If the event kind is unknown
        """
        if event not in EVENT_KINDS:
            raise ValueError(f"Unknown event kind '{event}', expected one of {', '.join(EVENT_KINDS)}")
        record = {"seq": len(self.records), "event": event, **self.context, **fields}
        self.records.append(record)
        logger.debug(f"{event}: {fields}")
        return record

    def of_kind(self, event: str) -> List[Dict[str, Any]]:
        return [r for r in self.records if r["event"] == event]

    def extend(self, records: Iterable[Dict[str, Any]]) -> None:
        """Append records from another log, renumbering them."""
        for record in records:
            self.records.append({**record, "seq": len(self.records)})

    def write_jsonl(self, path: str) -> None:
        with open(path, "w") as f:
            for record in self.records:
                f.write(json.dumps(record, sort_keys=True))
                f.write("\n")
