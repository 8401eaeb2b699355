"""GRU encoder with DeTPP, next-event and positional next-K heads."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import grad as G
from .events import EventSequence

METHODS = ("detpp", "mae_ce", "mae_ce_k")
CHECKPOINT_MAGIC = b"DETPP1"
LN2 = math.log(2.0)


@dataclass(frozen=True)
class EncoderConfig:
    L: int
    embed_dim: int = 16
    hidden_dim: int = 64
    K: int = 32
    H: float = 10.0

    def __post_init__(self):
        if min(self.L, self.embed_dim, self.hidden_dim, self.K) < 1 or not self.H > 0:
            raise ValueError(f"invalid encoder config {self}")

    @property
    def time_scale(self) -> float:
        # zero raw output maps to H / 2
        return self.H / (2.0 * LN2)


@dataclass
class PredictionSet:
    """K slots of (presence logit, time shift, label logits).

    Fields are Tensors or arrays of shape (K,), (K,), (K, L), or with a
    leading anchor axis (N, K), (N, K), (N, K, L).
    """

    o_logit: object
    t_shift: object
    label_logits: object

    @staticmethod
    def _np(x) -> np.ndarray:
        return x.value if isinstance(x, G.Tensor) else np.asarray(x, dtype=np.float64)

    @property
    def presence(self) -> np.ndarray:
        return G.sigmoid_np(self._np(self.o_logit))

    @property
    def times(self) -> np.ndarray:
        return self._np(self.t_shift)

    @property
    def label_probs(self) -> np.ndarray:
        x = self._np(self.label_logits)
        e = np.exp(x - x.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)

    def __len__(self) -> int:
        return self._np(self.o_logit).shape[-1]

    def row(self, a: int) -> "PredictionSet":
        return PredictionSet(
            self._np(self.o_logit)[a], self._np(self.t_shift)[a], self._np(self.label_logits)[a]
        )


def _uniform(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def head_width(method: str, cfg: EncoderConfig) -> int:
    if method == "detpp":
        return cfg.K * (2 + cfg.L)
    if method == "mae_ce":
        return 1 + cfg.L
    if method == "mae_ce_k":
        return cfg.K * (1 + cfg.L)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


class SequenceModel:
    """Single-layer GRU over ``[embedding(l_n); log(1 + dt_n)]`` plus one head."""

    def __init__(self, config: EncoderConfig, method: str = "detpp", seed: int = 0):
        self.config = config
        self.method = method
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6E7]))
        c = config
        d_in = c.embed_dim + 1
        hd = c.hidden_dim
        width = head_width(method, c)
        self.params: dict[str, G.Parameter] = {}
        for name, value in [
            ("embed", rng.normal(0.0, 1.0, size=(c.L, c.embed_dim))),
            ("gru.w_ih", _uniform(rng, (d_in, 3 * hd), hd)),
            ("gru.w_hh", _uniform(rng, (hd, 3 * hd), hd)),
            ("gru.b_ih", _uniform(rng, (3 * hd,), hd)),
            ("gru.b_hh", _uniform(rng, (3 * hd,), hd)),
            ("head.w", _uniform(rng, (hd, width), hd)),
            ("head.b", np.zeros(width)),
        ]:
            self.params[name] = G.Parameter(value, name)

    # ------------------------------------------------------------ params

    def parameters(self) -> list[G.Parameter]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            if arrays[k].shape != p.shape:
                raise ValueError(f"parameter {k}: shape {arrays[k].shape} != {p.shape}")
            p.value = np.array(arrays[k], dtype=np.float64)
            p.zero_grad()

    def init_presence_bias(self, mean_target_len: float) -> None:
        if self.method != "detpp":
            return
        prior = min(0.5, max(mean_target_len, 1e-3) / self.config.K)
        stride = 2 + self.config.L
        self.params["head.b"].value[0::stride] = math.log(prior / (1.0 - prior))

    # ----------------------------------------------------------- encoder

    @staticmethod
    def _inputs(seqs: Sequence[EventSequence]):
        t_len = max(len(s) for s in seqs)
        b = len(seqs)
        labels = np.zeros((t_len, b), dtype=np.int64)
        logdt = np.zeros((t_len, b))
        for j, s in enumerate(seqs):
            n = len(s)
            labels[:n, j] = s.labels
            logdt[1:n, j] = np.log1p(np.diff(s.times))
        return labels, logdt

    def encode_batch(self, seqs: Sequence[EventSequence]) -> G.Tensor:
        """Hidden states for every event, rows ordered by (sequence, position)."""
        if not seqs or any(len(s) == 0 for s in seqs):
            raise ValueError("encode: empty sequence")
        p = self.params
        hd = self.config.hidden_dim
        labels, logdt = self._inputs(seqs)
        t_len, b = labels.shape
        emb = G.index_select(p["embed"], labels.reshape(-1))
        x = G.concat([emb, G.Tensor(logdt.reshape(-1, 1))], axis=1)
        gx = G.matmul(x, p["gru.w_ih"]) + G.broadcast_to(p["gru.b_ih"], (t_len * b, 3 * hd))
        bh = G.broadcast_to(p["gru.b_hh"], (b, 3 * hd))
        h = G.Tensor(np.zeros((b, hd)))
        states = []
        for t in range(t_len):
            gxt = gx[t * b:(t + 1) * b]
            gh = G.matmul(h, p["gru.w_hh"]) + bh
            r = G.sigmoid(gxt[:, :hd] + gh[:, :hd])
            z = G.sigmoid(gxt[:, hd:2 * hd] + gh[:, hd:2 * hd])
            n = G.tanh(gxt[:, 2 * hd:] + r * gh[:, 2 * hd:])
            h = n - z * (n - h)
            states.append(h)
        allh = G.concat(states, axis=0)  # time-major
        rows = np.concatenate([np.arange(len(s)) * b + j for j, s in enumerate(seqs)])
        return G.index_select(allh, rows)

    def encode(self, seq: EventSequence) -> G.Tensor:
        return self.encode_batch([seq])

    # numpy-only recurrence for autoregressive rollout
    def gru_step_np(self, labels: np.ndarray, logdt: np.ndarray, h: np.ndarray) -> np.ndarray:
        p = {k: v.value for k, v in self.params.items()}
        hd = self.config.hidden_dim
        x = np.concatenate([p["embed"][labels], logdt[:, None]], axis=1)
        gx = x @ p["gru.w_ih"] + p["gru.b_ih"]
        gh = h @ p["gru.w_hh"] + p["gru.b_hh"]
        r = G.sigmoid_np(gx[:, :hd] + gh[:, :hd])
        z = G.sigmoid_np(gx[:, hd:2 * hd] + gh[:, hd:2 * hd])
        n = np.tanh(gx[:, 2 * hd:] + r * gh[:, 2 * hd:])
        return n - z * (n - h)

    # ------------------------------------------------------------- heads

    def _head(self, h: G.Tensor) -> G.Tensor:
        p = self.params
        n = h.shape[0]
        return G.matmul(h, p["head.w"]) + G.broadcast_to(p["head.b"], (n, p["head.b"].shape[0]))

    def _times(self, raw: G.Tensor) -> G.Tensor:
        return G.scale(G.softplus(raw), self.config.time_scale)

    def detpp_head(self, h: G.Tensor) -> PredictionSet:
        self._require("detpp")
        c = self.config
        out = G.reshape(self._head(h), (h.shape[0], c.K, 2 + c.L))
        return PredictionSet(out[:, :, 0], self._times(out[:, :, 1]), out[:, :, 2:])

    def next_event_head(self, h: G.Tensor) -> tuple[G.Tensor, G.Tensor]:
        self._require("mae_ce")
        out = self._head(h)
        return self._times(out[:, 0]), out[:, 1:]

    def next_k_head(self, h: G.Tensor) -> tuple[G.Tensor, G.Tensor]:
        self._require("mae_ce_k")
        c = self.config
        out = G.reshape(self._head(h), (h.shape[0], c.K, 1 + c.L))
        return self._times(out[:, :, 0]), out[:, :, 1:]

    def _require(self, method: str) -> None:
        if self.method != method:
            raise ValueError(f"model trained as {self.method!r} has no {method} head")


# --------------------------------------------------------------- checkpoint


def save_checkpoint(path, model: SequenceModel, arrays: dict[str, np.ndarray] | None = None,
                    sections: dict[str, bytes] | None = None, meta: dict | None = None) -> None:
    """Write ``DETPP1\\n<json header>\\n<float64 LE arrays><named byte sections>``."""
    arrays = dict(arrays if arrays is not None else model.state_arrays())
    sections = dict(sections or {})
    entries = []
    offset = 0
    blobs = []
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.nbytes
    header = {
        "method": model.method,
        "config": asdict(model.config),
        "arrays": entries,
        "array_bytes": offset,
        "sections": [[name, len(sections[name])] for name in sorted(sections)],
        "meta": meta or {},
    }
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + b"\n")
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for blob in blobs:
            fh.write(blob)
        for name in sorted(sections):
            fh.write(sections[name])


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray], dict[str, bytes]]:
    with open(path, "rb") as fh:
        magic = fh.readline().rstrip(b"\n")
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a {CHECKPOINT_MAGIC.decode()} checkpoint")
        header = json.loads(fh.readline())
        blob = fh.read(header["array_bytes"])
        sections = {name: fh.read(size) for name, size in header["sections"]}
    arrays = {}
    for e in header["arrays"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        arrays[e["name"]] = np.frombuffer(blob, dtype="<f8", count=n, offset=e["offset"]).reshape(e["shape"]).copy()
    return header, arrays, sections


def load_model(path) -> tuple[SequenceModel, dict[str, np.ndarray], dict[str, bytes], dict]:
    """Model with its inference (best-validation) parameters."""
    header, arrays, sections = read_checkpoint(path)
    model = SequenceModel(EncoderConfig(**header["config"]), header["method"])
    model.load_arrays({k: arrays[k] for k in model.params})
    return model, arrays, sections, header
