"""Fixed text-prompt table for the inpainting backends.

Positive prompts describe diverse background scenes (plants and animals, no
crowds); a single shared negative prompt steers the generator away from
malformed people.
"""

from dataclasses import dataclass, field

import numpy as np

POSITIVE_PROMPTS = (
    "sunset over mountains, a lone eagle soaring, vibrant colors",
    "ancient forest, misty atmosphere, deer grazing among trees",
    "futuristic city skyline, neon-lit drones flying, cyberpunk style",
    "serene beach, seashells scattered on the sand, gentle waves",
    "snowy village, a fox prowling near cozy cabins, northern lights above",
    "bustling marketplace, exotic fruits and spices, colorful fabrics swaying",
    "abandoned castle, ivy-covered walls, crows perched on towers",
    "desert landscape, cacti scattered, a lone lizard basking in the sun",
    "underwater world, coral reefs teeming with fish, jellyfish drifting",
    "enchanted garden, blooming roses, butterflies fluttering around",
    "rainy city street, puddles reflecting streetlights, stray cat in the alley",
    "starry night sky, a full moon shining, an owl perched on a tree",
    "autumn forest, falling leaves in warm tones, a squirrel gathering acorns",
    "medieval town square, horses tied to a post, pigeons pecking on cobblestones",
    "tropical jungle, dense foliage, a parrot perched on a branch",
    "twilight in the mountains, calm lake with lily pads, fireflies glowing",
    "bustling urban park, tall trees with squirrels, children flying kites",
    "ancient ruins, crumbling stone with moss, a snake slithering through the grass",
    "futuristic lab, clean and sterile with robotic arms, plants growing in glass chambers",
    "rustic farmhouse, golden wheat fields swaying, a scarecrow standing tall",
)

NEGATIVE_PROMPT = "disfigured face, broken limbs, deformed body parts"


@dataclass(frozen=True)
class PromptStore:
    positives: tuple = field(default=POSITIVE_PROMPTS)
    negative: str = NEGATIVE_PROMPT

    def __post_init__(self):
        if not self.positives:
            raise ValueError("positive prompt list must be non-empty")
        if self.negative != NEGATIVE_PROMPT:
            raise ValueError("the negative prompt is fixed for all samples")

    def sample(self, seed: int) -> tuple[int, str, str]:
        """Uniform, seed-deterministic choice of a positive prompt."""
        rng = np.random.default_rng(seed)
        idx = int(rng.integers(len(self.positives)))
        return idx, self.positives[idx], self.negative


def sample_prompt(store: PromptStore, rng_seed: int) -> tuple[str, str]:
    _, pos, neg = store.sample(rng_seed)
    return pos, neg
