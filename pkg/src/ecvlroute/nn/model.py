"""The routing classifier.

Three variants share the same per-modality linear projections into a shared
d-dimensional space and the same sigmoid head:

* transformer: the projected [text; image; stats] vectors form a 3-token
  sequence (plus a learned per-slot additive vector), run through a small
  encoder stack and mean-pooled;
* mlp: the projected vectors are concatenated and fed to ReLU hidden layers;
* mf: a logistic bilinear scorer sigma(u^T A B z + c) on the raw concatenated
  feature vector, with A B a rank-r factorization.

Forward and backward are written against the kernel backend so the hot
elementwise chains can run compiled; matrix products use BLAS either way.
Parameters are float64 in memory and enumerable by name.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..features import FeatureBundle, STATS_DIM
from .backend import kernels as K


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class TransformerConfig:
    layers: int = 2
    d: int = 256
    heads: int = 4
    ffn: int = 512
    dropout: float = 0.3

    variant = "transformer"

    def __post_init__(self):
        if self.d % self.heads != 0:
            raise ModelError(f"model dim {self.d} not divisible by heads {self.heads}")


@dataclass(frozen=True)
class MlpConfig:
    d: int = 256
    hidden: tuple[int, ...] = (256, 256, 256)

    variant = "mlp"


@dataclass(frozen=True)
class MfConfig:
    rank: int = 16
    inner: int = 64   # dimension of u (rows of the factored bilinear form)

    variant = "mf"


VariantConfig = TransformerConfig | MlpConfig | MfConfig

_LN_EPS = 1e-5


def stable_sigmoid(z: np.ndarray) -> np.ndarray:
    """Overflow-free logistic; strictly inside (0, 1) for finite inputs."""
    # +-36 saturates within one float64 ulp of 0/1 while keeping the output
    # strictly inside the open interval.
    z = np.clip(np.asarray(z, dtype=np.float64), -36.0, 36.0)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def make_batch(
    bundles: Sequence[FeatureBundle], k_text: int, k_image: int
) -> dict[str, np.ndarray]:
    """Dense batch arrays; masked or absent modalities become zero vectors."""
    n = len(bundles)
    xt = np.zeros((n, k_text), dtype=np.float64)
    xi = np.zeros((n, k_image), dtype=np.float64)
    xs = np.zeros((n, STATS_DIM), dtype=np.float64)
    for row, b in enumerate(bundles):
        if b.mask[0] and b.e_text is not None:
            if b.e_text.shape[0] != k_text:
                raise ModelError(f"text dim mismatch for {b.query_id}: "
                                 f"{b.e_text.shape[0]} != {k_text}")
            xt[row] = b.e_text
        if b.mask[1] and b.e_image is not None:
            if b.e_image.shape[0] != k_image:
                raise ModelError(f"image dim mismatch for {b.query_id}: "
                                 f"{b.e_image.shape[0]} != {k_image}")
            xi[row] = b.e_image
        if b.mask[2]:
            xs[row] = b.stats
    return {"text": xt, "image": xi, "stats": xs}


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class RouterModel:
    """Trainable routing classifier with flat, named parameter tensors."""

    def __init__(self, config: VariantConfig, k_text: int, k_image: int, seed: int = 0):
        self.config = config
        self.k_text = int(k_text)
        self.k_image = int(k_image)
        self.seed = int(seed)
        self.params: dict[str, np.ndarray] = {}
        self._init_params(np.random.default_rng(np.random.SeedSequence(seed)))

    # -- construction -----------------------------------------------------

    def _add(self, name, arr):
        self.params[name] = np.ascontiguousarray(arr, dtype=np.float64)

    def _init_params(self, rng):
        cfg = self.config
        dims = {"text": self.k_text, "image": self.k_image, "stats": STATS_DIM}
        if isinstance(cfg, MfConfig):
            nz = self.k_text + self.k_image + STATS_DIM
            self._add("mf.A", _uniform(rng, (cfg.inner, cfg.rank), cfg.rank))
            self._add("mf.B", _uniform(rng, (cfg.rank, nz), nz))
            self._add("mf.u", _uniform(rng, (cfg.inner,), cfg.inner))
            self._add("mf.c", np.zeros(1))
            return
        d = cfg.d
        for m in ("text", "image", "stats"):
            self._add(f"proj.{m}.W", _uniform(rng, (d, dims[m]), dims[m]))
            self._add(f"proj.{m}.b", np.zeros(d))
        if isinstance(cfg, TransformerConfig):
            self._add("slot", _uniform(rng, (3, d), d))
            for l in range(cfg.layers):
                for nm in ("Wq", "Wk", "Wv", "Wo"):
                    self._add(f"enc{l}.{nm}", _uniform(rng, (d, d), d))
                for nm in ("bq", "bk", "bv", "bo"):
                    self._add(f"enc{l}.{nm}", np.zeros(d))
                self._add(f"enc{l}.ln1.g", np.ones(d))
                self._add(f"enc{l}.ln1.b", np.zeros(d))
                self._add(f"enc{l}.W1", _uniform(rng, (cfg.ffn, d), d))
                self._add(f"enc{l}.b1", np.zeros(cfg.ffn))
                self._add(f"enc{l}.W2", _uniform(rng, (d, cfg.ffn), cfg.ffn))
                self._add(f"enc{l}.b2", np.zeros(d))
                self._add(f"enc{l}.ln2.g", np.ones(d))
                self._add(f"enc{l}.ln2.b", np.zeros(d))
            self._add("head.w", _uniform(rng, (d,), d))
        else:  # MLP
            widths = [3 * d, *cfg.hidden]
            for i in range(len(cfg.hidden)):
                self._add(f"mlp{i}.W", _uniform(rng, (widths[i + 1], widths[i]), widths[i]))
                self._add(f"mlp{i}.b", np.zeros(widths[i + 1]))
            self._add("head.w", _uniform(rng, (widths[-1],), widths[-1]))
        self._add("head.b", np.zeros(1))

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    # -- forward ----------------------------------------------------------

    def forward(self, batch: Mapping[str, np.ndarray], train: bool = False,
                rng: np.random.Generator | None = None):
        """Returns (logits [n], cache). Dropout only fires in train mode and
        only inside the transformer encoder blocks."""
        if isinstance(self.config, MfConfig):
            return self._forward_mf(batch)
        if isinstance(self.config, MlpConfig):
            return self._forward_mlp(batch)
        return self._forward_transformer(batch, train, rng)

    def _project(self, batch):
        P = self.params
        vs = {}
        for m in ("text", "image", "stats"):
            vs[m] = batch[m] @ P[f"proj.{m}.W"].T + P[f"proj.{m}.b"]
        return vs

    def _forward_mf(self, batch):
        P = self.params
        z = np.concatenate([batch["text"], batch["image"], batch["stats"]], axis=1)
        t1 = z @ P["mf.B"].T
        t2 = t1 @ P["mf.A"].T
        logits = t2 @ P["mf.u"] + P["mf.c"][0]
        return logits, {"z": z, "t1": t1, "t2": t2}

    def _forward_mlp(self, batch):
        P = self.params
        vs = self._project(batch)
        h = np.concatenate([vs["text"], vs["image"], vs["stats"]], axis=1)
        acts = [h]
        for i in range(len(self.config.hidden)):
            h = K.relu_forward(np.ascontiguousarray(h @ P[f"mlp{i}.W"].T + P[f"mlp{i}.b"]))
            acts.append(h)
        logits = h @ P["head.w"] + P["head.b"][0]
        return logits, {"batch": batch, "acts": acts}

    def _dropout_mask(self, rng, shape, p):
        # Inverted dropout; mask already carries the 1/(1-p) scale.
        keep = (rng.random(shape) >= p).astype(np.float64)
        return keep / (1.0 - p)

    def _forward_transformer(self, batch, train, rng):
        cfg = self.config
        P = self.params
        n = batch["text"].shape[0]
        d, H = cfg.d, cfg.heads
        hd = d // H
        drop = cfg.dropout if train else 0.0
        if drop > 0.0 and rng is None:
            raise ModelError("training-mode forward with dropout needs an rng")

        vs = self._project(batch)
        x = np.stack([vs["text"], vs["image"], vs["stats"]], axis=1) + P["slot"]
        cache = {"batch": batch, "x0": x, "layers": [], "drop": drop}

        for l in range(cfg.layers):
            lc: dict = {"x_in": x}
            xf = np.ascontiguousarray(x.reshape(n * 3, d))
            q = xf @ P[f"enc{l}.Wq"].T + P[f"enc{l}.bq"]
            k = xf @ P[f"enc{l}.Wk"].T + P[f"enc{l}.bk"]
            v = xf @ P[f"enc{l}.Wv"].T + P[f"enc{l}.bv"]

            def heads(m):
                return m.reshape(n, 3, H, hd).transpose(0, 2, 1, 3).reshape(n * H, 3, hd)

            qh, kh, vh = heads(q), heads(k), heads(v)
            scores = np.matmul(qh, kh.transpose(0, 2, 1)) / math.sqrt(hd)
            p0 = K.softmax_forward(
                np.ascontiguousarray(scores.reshape(n * H * 3, 3))
            ).reshape(n * H, 3, 3)
            if drop > 0.0:
                pmask = self._dropout_mask(rng, p0.shape, drop)
                pd = p0 * pmask
            else:
                pmask = None
                pd = p0
            att = np.matmul(pd, vh)  # [n*H, 3, hd]
            merged = att.reshape(n, H, 3, hd).transpose(0, 2, 1, 3).reshape(n * 3, d)
            o = merged @ P[f"enc{l}.Wo"].T + P[f"enc{l}.bo"]
            if drop > 0.0:
                omask = self._dropout_mask(rng, o.shape, drop)
                o = o * omask
            else:
                omask = None
            res1 = xf + o
            y1, mean1, rstd1 = K.layernorm_forward(
                np.ascontiguousarray(res1), P[f"enc{l}.ln1.g"], P[f"enc{l}.ln1.b"], _LN_EPS)

            f1 = y1 @ P[f"enc{l}.W1"].T + P[f"enc{l}.b1"]
            r1 = K.relu_forward(np.ascontiguousarray(f1))
            if drop > 0.0:
                fmask = self._dropout_mask(rng, r1.shape, drop)
                rd = r1 * fmask
            else:
                fmask = None
                rd = r1
            f2 = rd @ P[f"enc{l}.W2"].T + P[f"enc{l}.b2"]
            if drop > 0.0:
                gmask = self._dropout_mask(rng, f2.shape, drop)
                f2 = f2 * gmask
            else:
                gmask = None
            res2 = y1 + f2
            y2, mean2, rstd2 = K.layernorm_forward(
                np.ascontiguousarray(res2), P[f"enc{l}.ln2.g"], P[f"enc{l}.ln2.b"], _LN_EPS)

            lc.update(xf=xf, q=q, k=k, v=v, qh=qh, kh=kh, vh=vh, p0=p0, pd=pd,
                      pmask=pmask, merged=merged, omask=omask, res1=res1,
                      y1=y1, mean1=mean1, rstd1=rstd1, r1=r1, rd=rd, fmask=fmask,
                      gmask=gmask, res2=res2, mean2=mean2, rstd2=rstd2)
            cache["layers"].append(lc)
            x = y2.reshape(n, 3, d)

        h = x.mean(axis=1)
        logits = h @ P["head.w"] + P["head.b"][0]
        cache["h"] = h
        return logits, cache

    # -- backward ---------------------------------------------------------

    def backward(self, cache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        if isinstance(self.config, MfConfig):
            return self._backward_mf(cache, dlogits)
        if isinstance(self.config, MlpConfig):
            return self._backward_mlp(cache, dlogits)
        return self._backward_transformer(cache, dlogits)

    def _backward_mf(self, cache, dlogits):
        P = self.params
        g = {}
        z, t1, t2 = cache["z"], cache["t1"], cache["t2"]
        g["mf.c"] = np.array([dlogits.sum()])
        g["mf.u"] = t2.T @ dlogits
        dt2 = np.outer(dlogits, P["mf.u"])
        g["mf.A"] = dt2.T @ t1
        dt1 = dt2 @ P["mf.A"]
        g["mf.B"] = dt1.T @ z
        return g

    def _proj_grads(self, g, batch, dvs):
        for m in ("text", "image", "stats"):
            g[f"proj.{m}.W"] = dvs[m].T @ batch[m]
            g[f"proj.{m}.b"] = dvs[m].sum(axis=0)

    def _backward_mlp(self, cache, dlogits):
        P = self.params
        cfg = self.config
        g = {}
        acts = cache["acts"]
        h_last = acts[-1]
        g["head.b"] = np.array([dlogits.sum()])
        g["head.w"] = h_last.T @ dlogits
        dh = np.outer(dlogits, P["head.w"])
        for i in reversed(range(len(cfg.hidden))):
            dz = K.relu_backward(np.ascontiguousarray(dh), np.ascontiguousarray(acts[i + 1]))
            g[f"mlp{i}.W"] = dz.T @ acts[i]
            g[f"mlp{i}.b"] = dz.sum(axis=0)
            dh = dz @ P[f"mlp{i}.W"]
        d = cfg.d
        dvs = {"text": dh[:, :d], "image": dh[:, d:2 * d], "stats": dh[:, 2 * d:]}
        self._proj_grads(g, cache["batch"], dvs)
        return g

    def _backward_transformer(self, cache, dlogits):
        cfg = self.config
        P = self.params
        batch = cache["batch"]
        n = batch["text"].shape[0]
        d, H = cfg.d, cfg.heads
        hd = d // H
        g = {}

        h = cache["h"]
        g["head.b"] = np.array([dlogits.sum()])
        g["head.w"] = h.T @ dlogits
        dh = np.outer(dlogits, P["head.w"])
        dx = np.repeat(dh[:, None, :], 3, axis=1) / 3.0  # mean-pool backward

        for l in reversed(range(cfg.layers)):
            lc = cache["layers"][l]
            dy2 = np.ascontiguousarray(dx.reshape(n * 3, d))
            dres2, g[f"enc{l}.ln2.g"], g[f"enc{l}.ln2.b"] = K.layernorm_backward(
                dy2, np.ascontiguousarray(lc["res2"]), P[f"enc{l}.ln2.g"],
                lc["mean2"], lc["rstd2"])
            df2 = dres2 if lc["gmask"] is None else dres2 * lc["gmask"]
            g[f"enc{l}.W2"] = df2.T @ lc["rd"]
            g[f"enc{l}.b2"] = df2.sum(axis=0)
            drd = df2 @ P[f"enc{l}.W2"]
            dr1 = drd if lc["fmask"] is None else drd * lc["fmask"]
            df1 = K.relu_backward(np.ascontiguousarray(dr1), lc["r1"])
            g[f"enc{l}.W1"] = df1.T @ lc["y1"]
            g[f"enc{l}.b1"] = df1.sum(axis=0)
            dy1 = dres2 + df1 @ P[f"enc{l}.W1"]

            dres1, g[f"enc{l}.ln1.g"], g[f"enc{l}.ln1.b"] = K.layernorm_backward(
                np.ascontiguousarray(dy1), np.ascontiguousarray(lc["res1"]),
                P[f"enc{l}.ln1.g"], lc["mean1"], lc["rstd1"])
            do = dres1 if lc["omask"] is None else dres1 * lc["omask"]
            g[f"enc{l}.Wo"] = do.T @ lc["merged"]
            g[f"enc{l}.bo"] = do.sum(axis=0)
            dmerged = do @ P[f"enc{l}.Wo"]
            datt = dmerged.reshape(n, 3, H, hd).transpose(0, 2, 1, 3).reshape(n * H, 3, hd)

            dpd = np.matmul(datt, lc["vh"].transpose(0, 2, 1))
            dvh = np.matmul(lc["pd"].transpose(0, 2, 1), datt)
            dp0 = dpd if lc["pmask"] is None else dpd * lc["pmask"]
            dscores = K.softmax_backward(
                np.ascontiguousarray(dp0.reshape(n * H * 3, 3)),
                np.ascontiguousarray(lc["p0"].reshape(n * H * 3, 3)),
            ).reshape(n * H, 3, 3) / math.sqrt(hd)
            dqh = np.matmul(dscores, lc["kh"])
            dkh = np.matmul(dscores.transpose(0, 2, 1), lc["qh"])

            def unheads(m):
                return m.reshape(n, H, 3, hd).transpose(0, 2, 1, 3).reshape(n * 3, d)

            dq, dk, dv = unheads(dqh), unheads(dkh), unheads(dvh)
            xf = lc["xf"]
            g[f"enc{l}.Wq"] = dq.T @ xf
            g[f"enc{l}.bq"] = dq.sum(axis=0)
            g[f"enc{l}.Wk"] = dk.T @ xf
            g[f"enc{l}.bk"] = dk.sum(axis=0)
            g[f"enc{l}.Wv"] = dv.T @ xf
            g[f"enc{l}.bv"] = dv.sum(axis=0)
            dxf = (dres1 + dq @ P[f"enc{l}.Wq"] + dk @ P[f"enc{l}.Wk"]
                   + dv @ P[f"enc{l}.Wv"])
            dx = dxf.reshape(n, 3, d)

        g["slot"] = dx.sum(axis=0)
        dvs = {"text": dx[:, 0, :], "image": dx[:, 1, :], "stats": dx[:, 2, :]}
        self._proj_grads(g, batch, dvs)
        return g

    # -- inference --------------------------------------------------------

    def predict_logits(self, bundles: Sequence[FeatureBundle]) -> np.ndarray:
        batch = make_batch(bundles, self.k_text, self.k_image)
        logits, _ = self.forward(batch, train=False)
        return logits

    def predict_proba(self, bundles: Sequence[FeatureBundle]) -> np.ndarray:
        """p = P(edge competent | query); deterministic, always in (0, 1)."""
        return stable_sigmoid(self.predict_logits(bundles))

    def clone_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def load_params(self, params: Mapping[str, np.ndarray]):
        if set(params) != set(self.params):
            raise ModelError("parameter name mismatch")
        for k, v in params.items():
            if v.shape != self.params[k].shape:
                raise ModelError(f"shape mismatch for {k}")
            self.params[k] = np.ascontiguousarray(v, dtype=np.float64)
