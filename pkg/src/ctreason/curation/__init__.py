from .filtering import VolumeMaskSeries, filter_slices
from .generate import (
    AppearanceDescription,
    ClientConfig,
    GenerationClient,
    GenerationOutcome,
    HttpGenerationClient,
    MockGenerationClient,
    generate_description,
    load_schema,
    validate_description,
)
from .prompts import VisualPromptSet, build_prompt, derive_visual_prompts

__all__ = [
    "VolumeMaskSeries",
    "filter_slices",
    "AppearanceDescription",
    "ClientConfig",
    "GenerationClient",
    "GenerationOutcome",
    "HttpGenerationClient",
    "MockGenerationClient",
    "generate_description",
    "load_schema",
    "validate_description",
    "VisualPromptSet",
    "build_prompt",
    "derive_visual_prompts",
]
