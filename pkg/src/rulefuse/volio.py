"""File formats, dataset manifests and report emission.

The native volume format is a raw little-endian payload next to a JSON
sidecar at `<payload>.json`:

    {"dims": [nx,ny,nz], "spacing_mm": [sx,sy,sz],
     "dtype": "f32le" | "u8", "order": "x-fastest", "modality": "..."}

f32le payloads load as probability volumes, u8 payloads as label volumes; the
linearization is x-fastest. NIfTI-1 is supported read-only for uncompressed
3D float32/uint8 single files. Reports are emitted with fixed field order and
floats rounded to 6 significant digits so identical runs are byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .discovery import (
    AvailabilityTable,
    CaseRecord,
    GridSearchResult,
    MCResult,
    RuleEvaluation,
)
from .errors import DataError, VolumeFormatError
from .metrics import MetricsReport
from .rules import decision_from_number
from .sampling import SampledRuleSet
from .volumes import LabelVolume, Modality, ProbabilityVolume

SIDECAR_SUFFIX = ".json"
_DTYPES = {"f32le": np.dtype("<f4"), "u8": np.dtype("u1")}


def _sidecar_and_payload(path) -> tuple[Path, Path]:
    path = Path(path)
    if path.suffix == SIDECAR_SUFFIX:
        return path, path.with_suffix("")
    return Path(str(path) + SIDECAR_SUFFIX), path


def save_volume(volume, path) -> Path:
    """Write payload at `path` and sidecar at `path.json`; returns payload path."""
    sidecar, payload = _sidecar_and_payload(path)
    if isinstance(volume, ProbabilityVolume):
        dtype_name = "f32le"
        raw = volume.values.astype("<f4")
        modality = volume.modality.value
    elif isinstance(volume, LabelVolume):
        dtype_name = "u8"
        raw = volume.values.astype("u1")
        modality = "label"
    else:
        raise TypeError(f"cannot save {type(volume).__name__}")
    payload.parent.mkdir(parents=True, exist_ok=True)
    payload.write_bytes(raw.ravel(order="F").tobytes())
    meta = {
        "dims": list(volume.dims),
        "spacing_mm": [float(s) for s in volume.spacing],
        "dtype": dtype_name,
        "order": "x-fastest",
        "modality": modality,
    }
    sidecar.write_text(json.dumps(meta, indent=2) + "\n")
    return payload


def load_volume(path):
    """Read a sidecar+payload pair; dtype decides the volume type."""
    sidecar, payload = _sidecar_and_payload(path)
    if not sidecar.exists():
        raise VolumeFormatError(f"missing sidecar {sidecar}")
    if not payload.exists():
        raise VolumeFormatError(f"missing payload {payload}")
    try:
        meta = json.loads(sidecar.read_text())
    except json.JSONDecodeError as exc:
        raise VolumeFormatError(f"sidecar {sidecar} is not valid JSON: {exc}") from None

    dims = meta.get("dims")
    if not (isinstance(dims, list) and len(dims) == 3 and all(int(d) > 0 for d in dims)):
        raise VolumeFormatError(f"sidecar {sidecar}: dims must be 3 positive integers, got {dims}")
    dims = tuple(int(d) for d in dims)
    spacing = meta.get("spacing_mm", [1.0, 1.0, 1.0])
    if not (isinstance(spacing, list) and len(spacing) == 3 and all(float(s) > 0 for s in spacing)):
        raise VolumeFormatError(f"sidecar {sidecar}: spacing_mm must be 3 positive reals")
    order = meta.get("order", "x-fastest")
    if order != "x-fastest":
        raise VolumeFormatError(f"sidecar {sidecar}: unsupported order {order!r}")
    dtype_name = meta.get("dtype")
    if dtype_name not in _DTYPES:
        raise VolumeFormatError(
            f"sidecar {sidecar}: dtype must be one of {sorted(_DTYPES)}, got {dtype_name!r}"
        )
    dtype = _DTYPES[dtype_name]

    expected = int(np.prod(dims)) * dtype.itemsize
    blob = payload.read_bytes()
    if len(blob) != expected:
        raise VolumeFormatError(
            f"payload {payload}: expected {expected} bytes for dims {dims} ({dtype_name}), "
            f"got {len(blob)}"
        )
    values = np.frombuffer(blob, dtype=dtype).reshape(dims, order="F")

    if dtype_name == "u8":
        if not np.all((values == 0) | (values == 1)):
            raise VolumeFormatError(f"payload {payload}: u8 label values must be 0 or 1")
        return LabelVolume(values.astype(bool), spacing=tuple(spacing))
    values = values.astype(np.float64)
    if values.size and (values.min() < 0.0 or values.max() > 1.0):
        raise VolumeFormatError(
            f"payload {payload}: probability values must lie in [0, 1], "
            f"found [{values.min()}, {values.max()}]"
        )
    modality = meta.get("modality", "combined")
    try:
        modality = Modality(modality)
    except ValueError:
        modality = Modality.COMBINED
    return ProbabilityVolume(values, spacing=tuple(spacing), modality=modality)


# --- NIfTI-1 (read-only, minimal) -------------------------------------------

_NIFTI_DTYPES = {2: "u1", 16: "f4"}


def load_nifti1(path):
    """Parse an uncompressed single-file 3D NIfTI-1 volume.

    float32 data load as a probability volume (values must already lie in
    [0,1] after scl scaling), uint8 as a label volume. Anything else —
    gzip, 4D, other dtypes, detached headers — is rejected.
    """
    path = Path(path)
    blob = path.read_bytes()
    if blob[:2] == b"\x1f\x8b":
        raise VolumeFormatError(f"{path}: gzip-compressed NIfTI is not supported")
    if len(blob) < 348:
        raise VolumeFormatError(f"{path}: too short for a NIfTI-1 header ({len(blob)} bytes)")

    for bo in ("<", ">"):
        if int(np.frombuffer(blob, dtype=f"{bo}i4", count=1, offset=0)[0]) == 348:
            break
    else:
        raise VolumeFormatError(f"{path}: sizeof_hdr is not 348 in either byte order")

    magic = blob[344:348]
    if magic != b"n+1\x00":
        raise VolumeFormatError(f"{path}: bad magic {magic!r}, expected b'n+1\\x00'")

    dim = np.frombuffer(blob, dtype=f"{bo}i2", count=8, offset=40)
    if int(dim[0]) != 3:
        raise VolumeFormatError(f"{path}: only 3D volumes supported, got dim[0]={int(dim[0])}")
    dims = tuple(int(d) for d in dim[1:4])
    if min(dims) < 1:
        raise VolumeFormatError(f"{path}: non-positive dimensions {dims}")

    datatype = int(np.frombuffer(blob, dtype=f"{bo}i2", count=1, offset=70)[0])
    if datatype not in _NIFTI_DTYPES:
        raise VolumeFormatError(
            f"{path}: unsupported datatype code {datatype} (need 2=uint8 or 16=float32)"
        )
    dtype = np.dtype(bo + _NIFTI_DTYPES[datatype])

    pixdim = np.frombuffer(blob, dtype=f"{bo}f4", count=8, offset=76)
    spacing = tuple(float(p) for p in pixdim[1:4])
    if min(spacing) <= 0:
        raise VolumeFormatError(f"{path}: non-positive pixdim spacing {spacing}")

    vox_offset = float(np.frombuffer(blob, dtype=f"{bo}f4", count=1, offset=108)[0])
    offset = int(vox_offset)
    if offset != vox_offset or offset < 348:
        raise VolumeFormatError(f"{path}: bad vox_offset {vox_offset}")
    scl_slope = float(np.frombuffer(blob, dtype=f"{bo}f4", count=1, offset=112)[0])
    scl_inter = float(np.frombuffer(blob, dtype=f"{bo}f4", count=1, offset=116)[0])

    n_bytes = int(np.prod(dims)) * dtype.itemsize
    if len(blob) < offset + n_bytes:
        raise VolumeFormatError(
            f"{path}: payload truncated, need {offset + n_bytes} bytes, have {len(blob)}"
        )
    values = np.frombuffer(blob, dtype=dtype, count=int(np.prod(dims)), offset=offset)
    values = values.reshape(dims, order="F").astype(np.float64)
    if scl_slope != 0.0:
        values = values * scl_slope + scl_inter

    if datatype == 2:
        if not np.all((values == 0) | (values == 1)):
            raise VolumeFormatError(f"{path}: uint8 labels must be 0/1 after scaling")
        return LabelVolume(values.astype(bool), spacing=spacing)
    if values.size and (values.min() < 0.0 or values.max() > 1.0):
        raise VolumeFormatError(
            f"{path}: probability values must lie in [0,1] after scaling, "
            f"found [{values.min()}, {values.max()}]"
        )
    return ProbabilityVolume(values, spacing=spacing)


def load_any_volume(path):
    """Dispatch on extension: .nii → NIfTI-1, anything else → sidecar format."""
    if str(path).endswith(".nii"):
        return load_nifti1(path)
    return load_volume(path)


# --- dataset manifests -------------------------------------------------------

MANIFEST_VERSION = 1
_MODALITY_KEYS = ("T2W", "DWI_hb", "ADC")


def write_manifest(path, cases: list[dict], meta: dict | None = None) -> Path:
    """Manifest = JSON with per-case relative paths and a split tag each."""
    path = Path(path)
    doc = {"version": MANIFEST_VERSION}
    doc.update(meta or {})
    doc["cases"] = cases
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_round_floats(doc), indent=2) + "\n")
    return path


def load_manifest(path, split: str | None = None) -> tuple[list[CaseRecord], dict]:
    """Load (cases, manifest dict); `split` filters to one split when given."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest {path} does not exist")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {path} is not valid JSON: {exc}") from None
    entries = doc.get("cases")
    if not isinstance(entries, list):
        raise DataError(f"manifest {path} has no 'cases' list")
    base = path.parent
    records = []
    for entry in entries:
        case_id = entry.get("case_id")
        if case_id is None:
            raise DataError(f"manifest {path}: case entry without case_id")
        if split is not None and entry.get("split") != split:
            continue
        mod_paths = entry.get("modalities", {})
        modalities = []
        for key in _MODALITY_KEYS:
            if key not in mod_paths:
                raise DataError(f"case {case_id}: missing modality {key} in manifest")
            vol = load_any_volume(base / mod_paths[key])
            if not isinstance(vol, ProbabilityVolume):
                raise DataError(f"case {case_id}: modality {key} is not a probability volume")
            modalities.append(vol)
        truth_path = entry.get("truth")
        if truth_path is None:
            raise DataError(f"case {case_id}: missing truth in manifest")
        truth = load_any_volume(base / truth_path)
        if not isinstance(truth, LabelVolume):
            raise DataError(f"case {case_id}: truth is not a label volume")
        zones = None
        if entry.get("zones"):
            zones = {}
            for name, rel in sorted(entry["zones"].items()):
                zone = load_any_volume(base / rel)
                if not isinstance(zone, LabelVolume):
                    raise DataError(f"case {case_id}: zone {name} is not a label volume")
                zones[name] = zone
        records.append(
            CaseRecord(case_id=case_id, modalities=tuple(modalities), truth=truth, zones=zones)
        )
    if not records:
        raise DataError(
            f"manifest {path} produced no cases" + (f" for split {split!r}" if split else "")
        )
    return records, doc


def manifest_splits(doc: dict) -> dict[str, str]:
    return {e["case_id"]: e.get("split", "train") for e in doc.get("cases", [])}


# --- reports ------------------------------------------------------------------


def _round_floats(obj):
    """Round all floats to 6 significant digits for stable, readable reports."""
    if isinstance(obj, float):
        if math.isfinite(obj):
            return float(f"{obj:.6g}")
        return obj
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    return obj


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def report_dict(result) -> dict:
    if isinstance(result, dict):
        return result
    to_dict = getattr(result, "to_dict", None)
    if to_dict is None:
        raise TypeError(f"cannot serialize {type(result).__name__}")
    return to_dict()


def _csv_rows(result) -> tuple[list[str], list[list]]:
    if isinstance(result, GridSearchResult):
        rows = []
        stacking = any(r.model == "stacking" for r in result.rows)
        header = ["rank", "model"]
        header += (
            ["rule_number", "decision_bits", "b1", "b2", "b3", "b0"]
            if stacking
            else ["alpha1", "alpha2", "alpha3"]
        )
        header += [
            "mean_dsc", "sd_dsc", "mean_hd95", "mean_recall", "mean_precision", "n_cases",
        ]
        for rank, row in enumerate(result.rows, start=1):
            rec = [rank, row.model]
            if stacking:
                bits = ""
                if row.rule_number is not None:
                    bits = "".join(str(b) for b in decision_from_number(row.rule_number).as_ints())
                rec += [row.rule_number, bits] + [float(b) for b in row.rule.beta]
            else:
                rec += [float(a) for a in row.rule.alpha]
            rec += [
                row.mean_dsc, row.sd_dsc, row.mean_hd95,
                row.mean_recall, row.mean_precision, row.n_cases,
            ]
            rows.append(rec)
        return header, rows
    if isinstance(result, AvailabilityTable):
        header = [
            "subset", "alpha1", "alpha2", "alpha3", "mean_dsc", "delta_dsc",
            "mean_hd95", "delta_hd95", "mean_recall", "mean_precision", "n_cases",
        ]
        rows = []
        for row in result.rows:
            a = row.evaluation.rule.as_tuple()
            rows.append([
                row.subset, a[0], a[1], a[2], row.evaluation.mean_dsc, row.delta_dsc,
                row.evaluation.mean_hd95, row.delta_hd95, row.evaluation.mean_recall,
                row.evaluation.mean_precision, row.evaluation.n_cases,
            ])
        return header, rows
    if isinstance(result, MCResult):
        header = ["case_id", "voxel_variance_max", "voxel_variance_mean", "dsc_mean", "dsc_variance"]
        rows = [
            [c.case_id, float(c.variance.max()), float(c.variance.mean()), c.dsc_mean, c.dsc_variance]
            for c in result.cases
        ]
        return header, rows
    if isinstance(result, MetricsReport):
        d = result.to_dict()
        return list(d.keys()), [list(d.values())]
    if isinstance(result, RuleEvaluation):
        d = result.to_dict()
        return list(d.keys()), [[_flatten(v) for v in d.values()]]
    if isinstance(result, SampledRuleSet):
        header = ["rule_number", "decision_bits", "b1", "b2", "b3", "b0", "residual"]
        rows = []
        for entry in result.entries:
            bits = "".join(str(b) for b in entry.decision.as_ints())
            rows.append([entry.rule_number, bits] + [float(b) for b in entry.rule.beta] + [entry.residual])
        return header, rows
    raise TypeError(f"no CSV layout for {type(result).__name__}")


def _flatten(value):
    if isinstance(value, (list, tuple)):
        return ";".join(_fmt(v) for v in value)
    return value


def heatmap_csv(result: GridSearchResult, metric: str = "dsc") -> str:
    """CSV of (alpha1, alpha2, value); alpha3 is implied by 1 − alpha1 − alpha2."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["alpha1", "alpha2", metric])
    for a1, a2, value in result.heatmap_rows(metric):
        writer.writerow([_fmt(a1), _fmt(a2), _fmt(value)])
    return buf.getvalue()


def render_report(result, fmt: str = "json") -> str:
    if fmt == "json":
        return json.dumps(_round_floats(report_dict(result)), indent=2) + "\n"
    if fmt == "csv":
        header, rows = _csv_rows(result)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
        return buf.getvalue()
    raise ValueError(f"unknown report format {fmt!r}")


def write_report(result, fmt: str = "json", path=None) -> str:
    """Render to `fmt`; write to `path` when given. Returns the rendered text."""
    text = render_report(result, fmt)
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    return text
