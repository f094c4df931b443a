"""Neural-operator surrogate models and shared parameter machinery."""

from __future__ import annotations

from .common import Model, load_checkpoint, save_checkpoint

ARCHITECTURES = ("fno", "tfno", "don", "don_cnn", "pod_don", "cno")


def build_model(architecture: str, config: dict | None = None,
                seed: int = 0, **kwargs):
    """Instantiate a model by architecture name.

    ``config`` holds the architecture's config-dataclass fields; omitted
    fields take the best-found defaults for that architecture.  Extra
    keyword arguments are forwarded to the model constructor (POD models
    require ``basis=``, built from training data via ``pod_fit``).
    """
    config = dict(config or {})
    if architecture in ("fno", "tfno"):
        from .fno import Fno, FnoConfig, fno_found, tfno_found
        base = (tfno_found() if architecture == "tfno" else fno_found()).to_dict()
        base.update(config)
        return Fno(FnoConfig.from_dict(base), seed=seed, **kwargs)
    if architecture in ("don", "don_cnn", "pod_don"):
        from .don import (Don, DonConfig, don_cnn_found, don_found,
                          pod_don_found)
        found = {"don": don_found, "don_cnn": don_cnn_found,
                 "pod_don": pod_don_found}[architecture]
        base = found().to_dict()
        base.update(config)
        return Don(DonConfig.from_dict(base), seed=seed, **kwargs)
    if architecture == "cno":
        from .cno import Cno, CnoConfig, cno_found
        base = cno_found().to_dict()
        base.update(config)
        return Cno(CnoConfig.from_dict(base), seed=seed, **kwargs)
    raise ValueError(f"unknown architecture {architecture!r}; "
                     f"expected one of {ARCHITECTURES}")


def restore_model(path, field_shape=None):
    """Rebuild a model from a checkpoint file.

    Dispatches on the stored architecture, loads the trained parameters
    bit-exactly, and reconstructs any persisted extras (the fixed spatial
    basis of the POD variant, whose grid shape is recovered from the
    stored mean field).  ``field_shape`` sizes coefficient/basis models
    when no basis pins it (default 64x64).  Returns (model, header).
    """
    header, arrays = load_checkpoint(path)
    manifest = header["manifest"]
    n_params = header["n_params"]
    params = {e["name"]: arrays[e["name"]] for e in manifest[:n_params]}
    extras = {e["name"]: arrays[e["name"]] for e in manifest[n_params:]}
    kwargs = {}
    architecture = header["architecture"]
    if architecture in ("don", "don_cnn", "pod_don"):
        if "pod_mean" in extras:
            from .don import PodBasis
            shape = extras["pod_mean"].shape[1:]
            kwargs["basis"] = PodBasis.from_arrays(extras, field_shape=shape)
            kwargs["field_shape"] = shape
        else:
            kwargs["field_shape"] = field_shape or (64, 64)
    model = build_model(architecture, header["config"], seed=0, **kwargs)
    model.load_state(params)
    return model, header


__all__ = ["Model", "build_model", "restore_model", "save_checkpoint",
           "load_checkpoint", "ARCHITECTURES"]
