"""
Target Service
Builds target domains from mixture recipes on held-out references. Each target
image records which components and levels produced it.
"""

import logging
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from dgqa.errors import InputValidationError
from dgqa.models import DistortionSpec, RasterImage, TargetSet
from dgqa.schemas import CompositionMode, MixtureComponent, TargetMixtureRecipe, TargetSpec
from dgqa.seeding import derive_seed
from dgqa.services.distortion_service import FamilyDescriptor, apply_distortion, get_family, pseudo_label

logger = logging.getLogger(__name__)

PROVENANCE_SEP = "+"


def stratified_counts(weights: Sequence[float], n: int) -> List[int]:
    """Largest-remainder apportionment of n items; ties go to the earlier component"""
    quotas = np.asarray(weights, dtype=np.float64) * n
    counts = np.floor(quotas).astype(int)
    remainders = quotas - counts
    for i in sorted(range(len(weights)), key=lambda i: (-remainders[i], i))[: n - int(counts.sum())]:
        counts[i] += 1
    return counts.tolist()


def component_assignment(recipe: TargetMixtureRecipe, n: int, rng: np.random.Generator) -> List[int]:
    """Component index per target image for single-draw and stratified modes"""
    if recipe.mode == CompositionMode.STRATIFIED:
        assignment = np.repeat(np.arange(len(recipe.components)), stratified_counts(recipe.weights, n))
        return rng.permutation(assignment).tolist()
    return rng.choice(len(recipe.components), size=n, p=recipe.weights).tolist()


def provenance_group(entry: str) -> str:
    """Family part of a provenance entry: '11/3+1/2' -> '11+1'"""
    return PROVENANCE_SEP.join(part.split("/")[0] for part in entry.split(PROVENANCE_SEP))


def _apply_components(reference: RasterImage, components: Sequence[MixtureComponent],
                      rng: np.random.Generator, seed: int,
                      registry: Optional[Mapping[int, FamilyDescriptor]]) -> tuple:
    image = reference
    applied = []
    for step, component in enumerate(components):
        level = int(rng.choice(component.levels))
        spec = DistortionSpec(family=component.family, level=level, seed=derive_seed(seed, step))
        image = apply_distortion(image, spec, registry)
        applied.append(f"{component.family}/{level}")
    return image, PROVENANCE_SEP.join(applied)


def build_target(references: Sequence[RasterImage], reference_ids: Sequence[str], spec: TargetSpec, seed: int,
                 registry: Optional[Mapping[int, FamilyDescriptor]] = None) -> TargetSet:
    """
    Realize a mixture recipe on the given references.

    Args:
        references: Held-out pristine references (cycled when fewer than n_images)
        reference_ids: Identifiers of the references
        spec: Target specification with a recipe
        seed: Base seed; every image derives its own seed from it
        registry: Family registry (default registry when omitted)

    Returns:
        Labeled TargetSet (pseudo-MOS labels) with per-image provenance
    """
    if spec.recipe is None:
        raise InputValidationError(f"Target '{spec.name}' has no mixture recipe")
    if not references:
        raise InputValidationError(f"Target '{spec.name}' has no references to distort")
    if len(references) != len(reference_ids):
        raise InputValidationError("reference_ids must match references in length")
    recipe = spec.recipe
    for component in recipe.components:
        get_family(component.family, registry)

    rng = np.random.default_rng(derive_seed(seed, "target", spec.name))
    ref_order = rng.permutation(len(references))
    if recipe.mode == CompositionMode.STACKED:
        plan = [list(range(len(recipe.components)))] * spec.n_images
    else:
        plan = [[c] for c in component_assignment(recipe, spec.n_images, rng)]

    image_ids, images, refs, labels = [], [], [], []
    provenance: Dict[str, str] = {}
    for j, component_idx in enumerate(plan):
        ref_pos = int(ref_order[j % len(references)])
        image_seed = derive_seed(seed, "target", spec.name, j)
        image_rng = np.random.default_rng(image_seed)
        image, applied = _apply_components(references[ref_pos], [recipe.components[c] for c in component_idx],
                                           image_rng, image_seed, registry)
        image_id = f"{spec.name}_{j:04d}"
        image_ids.append(image_id)
        images.append(image)
        refs.append(reference_ids[ref_pos])
        labels.append(pseudo_label(references[ref_pos], image))
        provenance[image_id] = applied

    logger.info(f"Built target '{spec.name}': {spec.n_images} images, mode={recipe.mode.value}, "
                f"{len(recipe.components)} components")
    return TargetSet(name=spec.name, image_ids=tuple(image_ids), images=tuple(images),
                     reference_ids=tuple(refs), labels=np.asarray(labels), provenance=provenance)


def component_counts(target: TargetSet) -> Dict[str, int]:
    counts: Dict[str, int] = {}
    for image_id in target.image_ids:
        group = provenance_group(target.provenance.get(image_id, "unknown"))
        counts[group] = counts.get(group, 0) + 1
    return dict(sorted(counts.items()))
