"""Third-party model interfaces and their deterministic offline mocks.

Image-consuming oracles accept NCHW tensors in [-1, 1] so they can sit inside
training losses; ``FaceVerifier``/``AgeEstimator``/``LandmarkDetector`` take
HxWx3 numpy arrays.

Remote verifier settings come from the environment:

    DLAT_VERIFIER_URL      endpoint receiving POST {"image_a", "image_b"} (base64 PNG)
    DLAT_VERIFIER_TOKEN    bearer credential
    DLAT_VERIFIER_RATE     max requests per second (default 2)
    DLAT_VERIFIER_TIMEOUT  seconds per request (default 10)
    DLAT_VERIFIER_RETRIES  retries on 429/5xx/transport errors (default 3)
"""
from __future__ import annotations

import base64
import hashlib
import io
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import httpx
import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .datamodel import LandmarkSet
from .losses import perceptual_loss
from .template import face_template

POOL_SIDE = 16
RACE_CLASSES = ("white", "black", "latino_hispanic", "east_asian", "southeast_asian", "indian", "middle_eastern")


class RaceEstimator(Protocol):
    def __call__(self, images: torch.Tensor) -> torch.Tensor: ...


class IdentityEmbedder(Protocol):
    def __call__(self, images: torch.Tensor) -> torch.Tensor: ...


class PerceptualExtractor(Protocol):
    def __call__(self, images: torch.Tensor) -> list[torch.Tensor]: ...


class FaceVerifier(Protocol):
    def __call__(self, a: np.ndarray, b: np.ndarray, pair_id=None) -> float: ...


class AgeEstimator(Protocol):
    def __call__(self, image: np.ndarray) -> float: ...


class LandmarkDetector(Protocol):
    def __call__(self, image: np.ndarray) -> LandmarkSet: ...


def _projection(seed: int, salt: str, shape: tuple[int, int]) -> np.ndarray:
    digest = hashlib.sha256(f"{seed}:{salt}".encode()).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    return rng.standard_normal(shape) / np.sqrt(shape[0])


def _pooled(images: torch.Tensor) -> torch.Tensor:
    return F.adaptive_avg_pool2d(images, POOL_SIDE).flatten(1)


def _nchw(image: np.ndarray) -> torch.Tensor:
    return torch.as_tensor(np.ascontiguousarray(np.asarray(image, float).transpose(2, 0, 1)))[None]


class MockEmbedder:
    """Unit-normalized fixed random projection of 16x16-pooled pixels."""

    def __init__(self, seed: int = 0, dim: int = 512):
        self.weight = _projection(seed, "embed", (3 * POOL_SIDE**2, dim))

    def __call__(self, images: torch.Tensor) -> torch.Tensor:
        w = torch.as_tensor(self.weight, dtype=images.dtype)
        feats = _pooled(images)
        e = (feats - feats.mean(dim=1, keepdim=True)) @ w
        return e / e.norm(dim=1, keepdim=True).clamp_min(1e-12)


class MockRaceEstimator:
    """Softmax over a fixed random projection of pooled pixels."""

    def __init__(self, seed: int = 0, num_classes: int = len(RACE_CLASSES), temperature: float = 4.0):
        self.weight = _projection(seed, "race", (3 * POOL_SIDE**2, num_classes)) * temperature

    def __call__(self, images: torch.Tensor) -> torch.Tensor:
        return torch.softmax(_pooled(images) @ torch.as_tensor(self.weight, dtype=images.dtype), dim=1)


class MockPerceptual:
    """Average-pool pyramid at strides 2, 4, 8, 16 standing in for four conv layers."""

    def __call__(self, images: torch.Tensor) -> list[torch.Tensor]:
        return [F.avg_pool2d(images, 2**i) for i in range(1, 5)]


class MockVerifier:
    """clamp(100 * max(0, cos(embed(a), embed(b)))) in percent."""

    def __init__(self, embedder: MockEmbedder):
        self.embedder = embedder

    def embed(self, image: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            return self.embedder(_nchw(image))[0].numpy()

    def __call__(self, a: np.ndarray, b: np.ndarray, pair_id=None) -> float:
        cos = float(np.dot(self.embed(a), self.embed(b)))
        return float(min(100.0, 100.0 * max(0.0, cos)))


class MockAgeEstimator:
    def __init__(self, offset: float = 40.0, slope: float = 35.0):
        self.offset, self.slope = offset, slope

    def __call__(self, image: np.ndarray) -> float:
        return float(self.offset + self.slope * np.asarray(image, float).mean())


class MockLandmarkDetector:
    """Template landmarks plus up to +-``jitter`` px of content-seeded offset."""

    def __init__(self, seed: int = 0, jitter: float = 1.0):
        self.seed, self.jitter = seed, jitter

    def __call__(self, image: np.ndarray) -> LandmarkSet:
        img = np.asarray(image, float)
        q = np.round((img + 1) * 127.5).astype(np.uint8)
        digest = hashlib.sha256(q.tobytes() + str(self.seed).encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        pts = face_template(img.shape[0]) + rng.uniform(-self.jitter, self.jitter, (81, 2))
        return LandmarkSet(np.clip(pts, 0, img.shape[0] - 1))


def perceptual_distance(extractor: PerceptualExtractor) -> Callable[[np.ndarray, np.ndarray], float]:
    """Pairwise distance: mean over the four feature maps of mean absolute difference."""

    def dist(a: np.ndarray, b: np.ndarray) -> float:
        with torch.no_grad():
            return float(perceptual_loss(extractor(_nchw(a)), extractor(_nchw(b))))

    return dist


@dataclass(frozen=True)
class OracleSuite:
    race_estimator: RaceEstimator
    identity_embedder: IdentityEmbedder
    perceptual_extractor: PerceptualExtractor
    face_verifier: FaceVerifier
    age_estimator: AgeEstimator
    landmark_detector: LandmarkDetector


def mock_suite(seed: int = 0, race_classes: int = len(RACE_CLASSES), embed_dim: int = 512) -> OracleSuite:
    embedder = MockEmbedder(seed, embed_dim)
    return OracleSuite(
        race_estimator=MockRaceEstimator(seed, race_classes),
        identity_embedder=embedder,
        perceptual_extractor=MockPerceptual(),
        face_verifier=MockVerifier(embedder),
        age_estimator=MockAgeEstimator(),
        landmark_detector=MockLandmarkDetector(seed),
    )


# remote verifier ------------------------------------------------------------

class RemoteOracleError(RuntimeError):
    def __init__(self, message: str, pair_id=None):
        super().__init__(f"{message} (pair {pair_id})" if pair_id is not None else message)
        self.pair_id = pair_id


class RateLimitError(RemoteOracleError):
    pass


class AuthError(RemoteOracleError):
    pass


class ProtocolError(RemoteOracleError):
    pass


def encode_png(image: np.ndarray) -> str:
    q = np.round((np.clip(np.asarray(image, float), -1, 1) + 1) * 127.5).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(q).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode()


class RemoteVerifier:
    """HTTP face-verification client with a shared rate-limit gate and bounded retries."""

    def __init__(self, url: str, token: str = "", rate: float = 2.0, timeout: float = 10.0,
                 retries: int = 3, backoff: float = 0.5, client: httpx.Client | None = None,
                 sleep: Callable[[float], None] = time.sleep, clock: Callable[[], float] = time.monotonic):
        if not url:
            raise ValueError("remote verifier needs an endpoint URL (DLAT_VERIFIER_URL)")
        self.url = url
        self.retries = retries
        self.backoff = backoff
        self.min_interval = 1.0 / rate if rate > 0 else 0.0
        headers = {"Authorization": f"Bearer {token}"} if token else {}
        self.client = client or httpx.Client(timeout=timeout)
        self.headers = headers
        self._sleep, self._clock = sleep, clock
        self._gate = threading.Lock()
        self._last = -float("inf")

    @classmethod
    def from_env(cls, env=os.environ, **kw) -> "RemoteVerifier":
        return cls(
            env.get("DLAT_VERIFIER_URL", ""),
            env.get("DLAT_VERIFIER_TOKEN", ""),
            rate=float(env.get("DLAT_VERIFIER_RATE", 2.0)),
            timeout=float(env.get("DLAT_VERIFIER_TIMEOUT", 10.0)),
            retries=int(env.get("DLAT_VERIFIER_RETRIES", 3)),
            **kw,
        )

    def _wait_turn(self) -> None:
        with self._gate:
            delay = self._last + self.min_interval - self._clock()
            if delay > 0:
                self._sleep(delay)
            self._last = self._clock()

    def __call__(self, a: np.ndarray, b: np.ndarray, pair_id=None) -> float:
        payload = {"image_a": encode_png(a), "image_b": encode_png(b)}
        last_err: RemoteOracleError | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            self._wait_turn()
            try:
                resp = self.client.post(self.url, json=payload, headers=self.headers)
            except httpx.HTTPError as exc:
                last_err = RemoteOracleError(f"transport error: {exc}", pair_id)
                continue
            if resp.status_code == 429:
                last_err = RateLimitError("rate limited by verification endpoint", pair_id)
                continue
            if resp.status_code in (401, 403):
                raise AuthError(f"verification endpoint rejected credentials ({resp.status_code})", pair_id)
            if resp.status_code >= 500:
                last_err = RemoteOracleError(f"server error {resp.status_code}", pair_id)
                continue
            if resp.status_code != 200:
                raise RemoteOracleError(f"unexpected status {resp.status_code}", pair_id)
            return self._parse(resp, pair_id)
        assert last_err is not None
        raise last_err

    @staticmethod
    def _parse(resp: httpx.Response, pair_id) -> float:
        try:
            value = float(resp.json()["similarity"])
        except (ValueError, KeyError, TypeError) as exc:
            raise ProtocolError(f"malformed verification response: {exc}", pair_id) from None
        if not 0.0 <= value <= 100.0:
            raise ProtocolError(f"similarity {value} outside [0, 100]", pair_id)
        return value


def remote_verifier(**kw) -> RemoteVerifier:
    return RemoteVerifier.from_env(**kw)


def verify_many(verifier: FaceVerifier, pairs: Sequence[tuple], max_workers: int = 4) -> list[float]:
    """Score (pair_id, a, b) triples with bounded parallelism; order is preserved."""
    if max_workers <= 1:
        return [verifier(a, b, pair_id=pid) for pid, a, b in pairs]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(lambda p: verifier(p[1], p[2], pair_id=p[0]), pairs))
