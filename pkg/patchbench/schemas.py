from typing import Any

from pydantic import BaseModel


class SummaryRowOut(BaseModel):
    descriptor: str
    task: str
    map: float


class SummaryOut(BaseModel):
    rows: list[SummaryRowOut]


class PlotPointOut(BaseModel):
    descriptor: str
    task: str
    variant: str
    subvariant: str
    map: float


class PlotDataOut(BaseModel):
    points: list[PlotPointOut]


class ApRecordOut(BaseModel):
    task: str
    variant: str
    subvariant: str
    id: str
    ap: float


class DetailOut(BaseModel):
    descriptor: str
    task: str
    count: int
    records: list[ApRecordOut]


class NoiseProfileOut(BaseModel):
    theta_max: float
    t_max: float
    s_max: float
    a_max: float


class SequenceEntry(BaseModel):
    id: str
    kind: str
    split: str
    n_regions: int


class FileEntry(BaseModel):
    path: str
    sha256: str


class ManifestOut(BaseModel):
    format_version: int
    master_seed: int | None
    rho: float
    geometry_known: bool
    variants: list[str]
    noise_profiles: dict[str, NoiseProfileOut]
    sequences: list[SequenceEntry]
    config: dict[str, Any]
    hash_algo: str
    files: list[FileEntry]


class SequenceOut(SequenceEntry):
    homographies: list[list[float]] | None
    files: list[FileEntry]
