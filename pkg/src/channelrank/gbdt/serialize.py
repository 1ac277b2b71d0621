"""Model file format (.frm): canonical JSON with an integrity checksum.

Layout (documented contract):

* UTF-8 JSON object with exactly three keys: ``magic`` ("frm"),
  ``version`` (integer), ``sha256`` (hex digest), ``model`` (payload).
* The digest covers the canonical serialization of ``model``:
  ``json.dumps(payload, sort_keys=True, separators=(",", ":"))``.
* Floats are written with ``repr`` round-trip precision, so a load
  reproduces every threshold, weight and leaf value bit-exactly.
* ``model`` holds ``base_score``, ``shrinkage``, the feature schema, the
  training params, and one record per tree. Trees are flattened in
  preorder; each node is either ``["L", value, n]`` (leaf),
  ``["A", feature, threshold, missing_left, left_idx, right_idx, gain]``
  (axis split) or ``["O", features, weights, threshold, missing_left,
  left_idx, right_idx, gain]`` (oblique split), with child fields
  indexing into the same node list.

Any checksum, magic, version, or structural mismatch raises
:class:`ModelFormatError`; no partially constructed model escapes.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json

from ..features import FeatureColumn, FeatureSchema
from .model import Model, TrainParams
from .tree import AxisSplit, Leaf, Node, ObliqueSplit, Tree

MODEL_FORMAT_VERSION = 1
_MAGIC = "frm"


class ModelFormatError(ValueError):
    """Raised for unreadable, corrupt, or version-incompatible model files."""


def _flatten_tree(tree: Tree) -> list[list]:
    nodes: list[list] = []

    def add(node: Node) -> int:
        idx = len(nodes)
        if isinstance(node, Leaf):
            nodes.append(["L", node.value, node.n_samples])
            return idx
        if isinstance(node, AxisSplit):
            nodes.append(["A", node.feature, node.threshold, node.missing_left, -1, -1, node.gain])
        else:
            nodes.append([
                "O", list(node.features), list(node.weights), node.threshold,
                node.missing_left, -1, -1, node.gain,
            ])
        left = add(node.left)  # type: ignore[arg-type]
        right = add(node.right)  # type: ignore[arg-type]
        if isinstance(node, AxisSplit):
            nodes[idx][4] = left
            nodes[idx][5] = right
        else:
            nodes[idx][5] = left
            nodes[idx][6] = right
        return idx

    add(tree.root)
    return nodes


def _rebuild_tree(records: list[list]) -> Tree:
    def build(idx: int) -> Node:
        try:
            rec = records[idx]
        except (IndexError, TypeError) as exc:
            raise ModelFormatError(f"bad node reference {idx}") from exc
        tag = rec[0]
        if tag == "L":
            return Leaf(value=float(rec[1]), n_samples=int(rec[2]))
        if tag == "A":
            node = AxisSplit(
                feature=int(rec[1]),
                threshold=float(rec[2]),
                missing_left=bool(rec[3]),
                gain=float(rec[6]),
            )
            node.left = build(int(rec[4]))
            node.right = build(int(rec[5]))
            return node
        if tag == "O":
            node = ObliqueSplit(
                features=tuple(int(f) for f in rec[1]),
                weights=tuple(float(w) for w in rec[2]),
                threshold=float(rec[3]),
                missing_left=bool(rec[4]),
                gain=float(rec[7]),
            )
            node.left = build(int(rec[5]))
            node.right = build(int(rec[6]))
            return node
        raise ModelFormatError(f"unknown node tag {tag!r}")

    return Tree(root=build(0))


def _payload(model: Model) -> dict:
    return {
        "base_score": model.base_score,
        "shrinkage": model.shrinkage,
        "schema": [
            {"name": c.name, "kind": c.kind, "group": c.group}
            for c in model.schema.columns
        ],
        "params": dataclasses.asdict(model.params),
        "trees": [_flatten_tree(tree) for tree in model.trees],
    }


def _canonical(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def model_fingerprint(model: Model) -> str:
    """sha256 over the canonical payload; stable id for a trained model."""
    return hashlib.sha256(_canonical(_payload(model)).encode("utf-8")).hexdigest()


def serialize_model(model: Model) -> bytes:
    payload = _payload(model)
    canonical = _canonical(payload)
    digest = hashlib.sha256(canonical.encode("utf-8")).hexdigest()
    doc = {
        "magic": _MAGIC,
        "version": MODEL_FORMAT_VERSION,
        "sha256": digest,
        "model": payload,
    }
    return json.dumps(doc, sort_keys=True).encode("utf-8")


def loads_model(data: bytes) -> Model:
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"unreadable model payload: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("magic") != _MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    version = doc.get("version")
    if version != MODEL_FORMAT_VERSION:
        raise ModelFormatError(
            f"unsupported format version {version!r} (expected {MODEL_FORMAT_VERSION})"
        )
    payload = doc.get("model")
    if not isinstance(payload, dict):
        raise ModelFormatError("missing model payload")
    digest = hashlib.sha256(_canonical(payload).encode("utf-8")).hexdigest()
    if digest != doc.get("sha256"):
        raise ModelFormatError("checksum mismatch; model file is corrupt")
    try:
        schema = FeatureSchema(
            columns=tuple(
                FeatureColumn(c["name"], c["kind"], c["group"])
                for c in payload["schema"]
            )
        )
        params = TrainParams(**payload["params"])
        trees = tuple(_rebuild_tree(records) for records in payload["trees"])
        return Model(
            trees=trees,
            shrinkage=float(payload["shrinkage"]),
            base_score=float(payload["base_score"]),
            schema=schema,
            params=params,
            format_version=version,
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed model payload: {exc}") from exc


def save_model(model: Model, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_model(model))


def load_model(path: str) -> Model:
    with open(path, "rb") as fh:
        return loads_model(fh.read())
