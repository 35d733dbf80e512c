from prereq.plda.model import (
    ConceptVectorTable,
    ElboDecreaseError,
    FitReport,
    LinkObservation,
    LinkSet,
    PldaError,
    PldaHyper,
    PldaModel,
    VariationalState,
    all_pair_links,
    concept_vectors,
    e_step,
    elbo,
    fit,
    init_model,
    links_for_corpus,
    load_model,
    m_step,
    model_from_json,
    model_to_json,
    sample_nonedges,
    save_model,
)
from prereq.plda.lda import fit_lda

__all__ = [
    "ConceptVectorTable", "ElboDecreaseError", "FitReport", "LinkObservation", "LinkSet",
    "PldaError", "PldaHyper", "PldaModel", "VariationalState", "all_pair_links",
    "concept_vectors", "e_step", "elbo", "fit", "fit_lda", "init_model", "links_for_corpus",
    "load_model", "m_step", "model_from_json", "model_to_json", "sample_nonedges", "save_model",
]
