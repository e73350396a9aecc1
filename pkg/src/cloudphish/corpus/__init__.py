"""Dataset formats, splits, weight archives and synthetic corpora."""

from .datasets import (
    LABELS,
    LEGITIMATE,
    LOGO_SPLIT,
    PHISHING,
    URL_SPLIT,
    DataContractError,
    DatasetIOError,
    GroundTruthAnnotation,
    ManifestRecord,
    Reject,
    SplitSpec,
    UrlDataset,
    UrlSample,
    load_annotations,
    load_manifest,
    load_url_dataset,
    save_annotations,
    save_manifest,
    save_url_dataset,
    split,
    write_rejects,
)
from .synth import SynthPages, paired_probes, synth_pages, synth_urls

__all__ = [
    "LABELS", "LEGITIMATE", "LOGO_SPLIT", "PHISHING", "URL_SPLIT", "DataContractError", "DatasetIOError",
    "GroundTruthAnnotation", "ManifestRecord", "Reject", "SplitSpec", "SynthPages", "UrlDataset", "UrlSample",
    "load_annotations", "load_manifest", "load_url_dataset", "paired_probes", "save_annotations",
    "save_manifest", "save_url_dataset", "split", "synth_pages", "synth_urls", "write_rejects",
]
