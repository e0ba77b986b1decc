"""
Synthetic domains, dataset generation and manifests.

A domain is a weighted mix of phantom families plus an acquisition noise level. Each
generated image becomes one KSV1 file holding the fully sampled (optionally noisy)
k-space; masks are applied by the experiments.
"""

from __future__ import annotations

import hashlib
import logging
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import simplejson

from csrobust.core.datagen import FAMILIES, PhantomSpec, generate_phantom, generate_sensitivities
from csrobust.core.errors import InvalidSpecError, MissingInputError, ShapeMismatchError
from csrobust.core.fourier import SamplingMask, add_noise, forward
from csrobust.core.jobs import JobRunner
from csrobust.core.volume_io import Volume, read_volume, read_volume_header, write_volume

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class DomainSpec:
    """A synthetic image distribution: family weights and acquisition SNR (None = noiseless)."""

    name: str
    families: Dict[str, float] = field(default_factory=lambda: {"ellipses": 1.0})
    snr_db: Optional[float] = None

    @classmethod
    def from_dict(cls, name: str, payload: Dict[str, Any], snr_db: Optional[float] = None) -> "DomainSpec":
        families = payload.get("families", {"ellipses": 1.0})
        if isinstance(families, (list, tuple)):
            families = {str(f): 1.0 for f in families}
        snr = payload.get("snr_db", snr_db)
        return cls(name=name, families={str(k): float(v) for k, v in families.items()},
                   snr_db=None if snr is None else float(snr))

    def validate(self) -> None:
        if not self.name:
            raise InvalidSpecError("Domain name must not be empty")
        if not self.families:
            raise InvalidSpecError(f"Domain {self.name!r} lists no phantom families")
        for family, weight in self.families.items():
            if family not in FAMILIES:
                raise InvalidSpecError(f"Domain {self.name!r}: unknown family {family!r}")
            if weight < 0:
                raise InvalidSpecError(f"Domain {self.name!r}: negative weight for {family!r}")
        if sum(self.families.values()) <= 0:
            raise InvalidSpecError(f"Domain {self.name!r}: family weights sum to zero")

    def pick_family(self, rng: np.random.Generator) -> str:
        names = sorted(self.families)
        weights = np.array([self.families[n] for n in names], dtype=np.float64)
        return names[int(rng.choice(len(names), p=weights / weights.sum()))]


@dataclass(frozen=True)
class VolumeEntry:
    image_id: str
    path: Path
    n: int
    n_coils: int
    snr_db: Optional[float]
    seed: List[int]
    family: str

    def to_dict(self, root: Path) -> Dict[str, Any]:
        try:
            rel = self.path.relative_to(root)
        except ValueError:
            rel = self.path
        return {
            "id": self.image_id,
            "path": rel.as_posix(),
            "n": self.n,
            "n_coils": self.n_coils,
            "snr_db": self.snr_db,
            "seed": list(self.seed),
            "family": self.family,
        }


def _hash_unit(image_id: str, salt: str) -> float:
    digest = hashlib.sha256(f"{salt}:{image_id}".encode("utf-8")).hexdigest()
    return int(digest[:16], 16) / float(1 << 64)


@dataclass(frozen=True)
class DatasetManifest:
    """Ordered list of volumes belonging to one domain."""

    domain: str
    entries: Tuple[VolumeEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def ids(self) -> List[str]:
        return [entry.image_id for entry in self.entries]

    def subset(self, ids: Sequence[str], domain: Optional[str] = None) -> "DatasetManifest":
        wanted = set(ids)
        unknown = wanted - set(self.ids)
        if unknown:
            raise InvalidSpecError(f"Ids not in manifest {self.domain!r}: {sorted(unknown)}")
        kept = tuple(entry for entry in self.entries if entry.image_id in wanted)
        return DatasetManifest(domain=domain or self.domain, entries=kept)

    def split(self, fraction: float, salt: str = "split") -> Tuple["DatasetManifest", "DatasetManifest"]:
        """
        Disjoint (tune, test) split ranked by sha256 of the image id.

        The tune part gets round(fraction * n) volumes, clamped so both parts are
        non-empty when n >= 2.
        """
        if not 0 < fraction < 1:
            raise InvalidSpecError(f"Split fraction must be in (0, 1), got {fraction}")
        n = len(self.entries)
        if n < 2:
            raise InvalidSpecError(f"Cannot split manifest {self.domain!r} with {n} volume(s)")
        n_tune = min(max(int(round(fraction * n)), 1), n - 1)
        ranked = sorted(self.ids, key=lambda image_id: (_hash_unit(image_id, salt), image_id))
        tune_ids = set(ranked[:n_tune])
        tune = DatasetManifest(self.domain, tuple(e for e in self.entries if e.image_id in tune_ids))
        test = DatasetManifest(self.domain, tuple(e for e in self.entries if e.image_id not in tune_ids))
        assert not set(tune.ids) & set(test.ids)
        return tune, test

    def shape(self) -> Tuple[int, int]:
        """Common (N, n_coils); mixed shapes raise ShapeMismatchError."""
        if not self.entries:
            raise InvalidSpecError(f"Manifest {self.domain!r} is empty")
        shapes = {(entry.n, entry.n_coils) for entry in self.entries}
        if len(shapes) != 1:
            raise ShapeMismatchError(f"Manifest {self.domain!r} mixes shapes {sorted(shapes)}")
        return next(iter(shapes))

    def load(self, index: int) -> Volume:
        return read_volume(self.entries[index].path)

    def verify(self) -> None:
        """Every listed file exists, parses, and matches its recorded metadata."""
        for entry in self.entries:
            header = read_volume_header(entry.path)
            if int(header.get("n", -1)) != entry.n or int(header.get("n_coils", -1)) != entry.n_coils:
                raise ShapeMismatchError(
                    f"{entry.path}: header {header} disagrees with manifest n={entry.n}, "
                    f"n_coils={entry.n_coils}"
                )


def write_manifest(path: PathLike, manifest: DatasetManifest) -> Path:
    path = Path(path)
    root = path.parent.resolve()
    payload = {
        "domain": manifest.domain,
        "volumes": [entry.to_dict(root) for entry in manifest.entries],
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = path.with_suffix(path.suffix + ".tmp")
    with open(tmp_path, "w", encoding="utf-8") as f:
        simplejson.dump(payload, f, sort_keys=True, indent=2)
        f.write("\n")
    tmp_path.replace(path)
    return path


def load_manifest(path: PathLike) -> DatasetManifest:
    """Read a manifest; relative volume paths resolve against the manifest's directory."""
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"Manifest not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = simplejson.load(f)
        domain = str(payload["domain"])
        volumes = list(payload["volumes"])
    except (simplejson.JSONDecodeError, KeyError, TypeError) as exc:
        raise InvalidSpecError(f"Malformed manifest {path}: {exc}") from exc

    root = path.parent.resolve()
    entries = []
    seen = set()
    for item in volumes:
        image_id = str(item["id"])
        if image_id in seen:
            raise InvalidSpecError(f"Duplicate image id {image_id!r} in {path}")
        seen.add(image_id)
        volume_path = Path(item["path"])
        if not volume_path.is_absolute():
            volume_path = root / volume_path
        if not volume_path.exists():
            raise MissingInputError(f"Volume listed in {path} not found: {volume_path}")
        snr = item.get("snr_db")
        entries.append(
            VolumeEntry(
                image_id=image_id,
                path=volume_path,
                n=int(item["n"]),
                n_coils=int(item["n_coils"]),
                snr_db=None if snr is None else float(snr),
                seed=[int(s) for s in item.get("seed", [])],
                family=str(item.get("family", "")),
            )
        )
    return DatasetManifest(domain=domain, entries=tuple(entries))


def merge_manifests(domain: str, manifests: Sequence[DatasetManifest]) -> DatasetManifest:
    entries: List[VolumeEntry] = []
    seen = set()
    for manifest in manifests:
        for entry in manifest.entries:
            if entry.image_id in seen:
                raise InvalidSpecError(f"Duplicate image id {entry.image_id!r} while merging")
            seen.add(entry.image_id)
            entries.append(entry)
    return DatasetManifest(domain=domain, entries=tuple(entries))


def _domain_salt(name: str) -> int:
    return zlib.crc32(name.encode("utf-8")) & 0x7FFFFFFF


def simulate_volume(
    family: str,
    size: int,
    n_coils: int,
    snr_db: Optional[float],
    seed: Sequence[int],
    sparsity_basis: Optional[str] = None,
    sparsity_fraction: Optional[float] = None,
) -> Volume:
    """Phantom, coil maps and fully sampled k-space from one seed list."""
    seed = [int(s) for s in seed]
    target = generate_phantom(
        PhantomSpec(
            family=family,
            size=size,
            seed=seed + [0],
            sparsity_basis=sparsity_basis,
            sparsity_fraction=sparsity_fraction,
        )
    )
    sens = generate_sensitivities(n_coils, size, seed=seed + [1])
    kspace = forward(target, sens, SamplingMask.full(size))
    kspace = add_noise(kspace, snr_db, seed=seed + [2])
    return Volume(kspace=kspace, sens=sens, target=target)


def generate_dataset(
    domain: DomainSpec,
    n_images: int,
    out_dir: PathLike,
    size: int = 64,
    n_coils: int = 4,
    seed: int = 0,
    sparsity_basis: Optional[str] = None,
    sparsity_fraction: Optional[float] = None,
    runner: Optional[JobRunner] = None,
) -> DatasetManifest:
    """
    Write ``n_images`` volumes of ``domain`` to ``out_dir/<domain>/`` plus its manifest.

    Image ids are ``<domain>-<index:04d>``; image i draws from seed [seed, salt(domain), i].
    """
    domain.validate()
    if n_images < 1:
        raise InvalidSpecError(f"n_images must be >= 1, got {n_images}")
    root = Path(out_dir) / domain.name
    runner = runner or JobRunner(1)
    salt = _domain_salt(domain.name)

    def build(index: int) -> VolumeEntry:
        image_seed = [int(seed), salt, index]
        family = domain.pick_family(np.random.default_rng(image_seed))
        volume = simulate_volume(
            family, size, n_coils, domain.snr_db, image_seed, sparsity_basis, sparsity_fraction
        )
        image_id = f"{domain.name}-{index:04d}"
        path = write_volume(root / f"{image_id}.ksv", volume.kspace, volume.sens, volume.target)
        return VolumeEntry(
            image_id=image_id,
            path=path.resolve(),
            n=int(size),
            n_coils=int(n_coils),
            snr_db=domain.snr_db,
            seed=image_seed,
            family=family,
        )

    entries = runner.map(build, list(range(int(n_images))))
    manifest = DatasetManifest(domain=domain.name, entries=tuple(entries))
    write_manifest(root / MANIFEST_NAME, manifest)
    logger.info("Generated %d %s volumes in %s", len(entries), domain.name, root)
    return manifest

