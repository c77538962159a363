"""External-LLM error oracle: HTTP client with strict JSON validation.

Responses must be structured JSON (errors + turns); free-text replies
are rejected and retried. Auth comes from an environment variable and
every request/response pair is appended to an audit log.
"""

from __future__ import annotations

import json
import os

import requests
from jsonschema import ValidationError, validate

from .constructor import ErrorCodebook, IdentifiedError, load_prompt_template

__all__ = ["LlmResponseError", "LlmErrorOracle", "RESPONSE_SCHEMA", "AUTH_TOKEN_ENV"]

AUTH_TOKEN_ENV = "PREFALIGN_LLM_TOKEN"

RESPONSE_SCHEMA = {
    "type": "object",
    "required": ["errors", "turns"],
    "properties": {
        "errors": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["category", "span", "correction"],
                "properties": {
                    "category": {"type": "string"},
                    "span": {
                        "type": "array",
                        "items": {"type": "integer"},
                        "minItems": 2,
                        "maxItems": 2,
                    },
                    "correction": {"type": "string"},
                    "evidence": {
                        "type": "array",
                        "items": {"type": "integer"},
                        "minItems": 2,
                        "maxItems": 2,
                    },
                },
            },
        },
        "turns": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["question", "answer"],
                "properties": {
                    "question": {"type": "string"},
                    "answer": {"type": "string"},
                },
            },
        },
    },
}


class LlmResponseError(RuntimeError):
    """Raised when the LLM never produced schema-valid JSON; carries the
    raw response text of the final attempt."""

    def __init__(self, message, raw_response):
        super().__init__(message)
        self.raw_response = raw_response


class LlmErrorOracle:
    """Error-identification and conversation-construction client.

    The prompt template is a versioned text asset; the codebook section
    is injected verbatim. A custom `session` (anything with a .post
    returning an object with .status_code/.text) makes the client
    testable offline.
    """

    def __init__(self, endpoint, model, session=None, max_retries=3,
                 audit_path=None, timeout=60.0, k_turns=5):
        self.endpoint = endpoint
        self.model = model
        self.session = session if session is not None else requests.Session()
        self.max_retries = max_retries
        self.audit_path = audit_path
        self.timeout = timeout
        self.k_turns = k_turns
        self.prompt_template = load_prompt_template()

    def _render_prompt(self, response_text, ground_truth, codebook: ErrorCodebook):
        cb = "\n".join(
            f"- {c.name} ({c.level}-level): {c.description}" for c in codebook.categories
        )
        prompt = self.prompt_template
        prompt = prompt.replace("{codebook}", cb)
        prompt = prompt.replace("{ground_truth}", ground_truth)
        prompt = prompt.replace("{response}", response_text)
        prompt = prompt.replace("{k}", str(self.k_turns))
        return prompt

    def _audit(self, entry):
        if self.audit_path is None:
            return
        with open(self.audit_path, "a") as fh:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")

    def query(self, response_text, ground_truth, codebook: ErrorCodebook):
        """One identification+construction round trip.

        Returns (errors, turns) where errors are IdentifiedError records
        and turns are (question, answer) string pairs.
        """
        prompt = self._render_prompt(response_text, ground_truth, codebook)
        headers = {}
        token = os.environ.get(AUTH_TOKEN_ENV)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        body = {"model": self.model, "prompt": prompt}

        last_raw = ""
        for attempt in range(self.max_retries):
            resp = self.session.post(self.endpoint, json=body, headers=headers,
                                     timeout=self.timeout)
            last_raw = resp.text
            self._audit({
                "attempt": attempt,
                "request": body,
                "status": resp.status_code,
                "response": last_raw,
            })
            if resp.status_code != 200:
                continue
            try:
                doc = json.loads(last_raw)
                validate(doc, RESPONSE_SCHEMA)
            except (json.JSONDecodeError, ValidationError):
                continue
            known = codebook.names()
            if any(e["category"] not in known for e in doc["errors"]):
                continue
            errors = [
                IdentifiedError(
                    category=e["category"],
                    span=tuple(e["span"]),
                    correction=e["correction"],
                    evidence=tuple(e.get("evidence", (0, 0))),
                )
                for e in doc["errors"]
            ]
            turns = [(t["question"], t["answer"]) for t in doc["turns"]]
            return errors, turns
        raise LlmResponseError(
            f"no schema-valid response after {self.max_retries} attempts",
            raw_response=last_raw,
        )

    # oracle interface used by identify_errors
    def identify(self, y_r, y_c, codebook: ErrorCodebook):
        errors, _ = self.query(str(y_r), str(y_c), codebook)
        return errors
