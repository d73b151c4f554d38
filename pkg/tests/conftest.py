import json
from pathlib import Path

import pytest

from speciesrag.knowledge import KnowledgeBase, SpeciesRecord
from speciesrag.simlab import SimConfig, generate_instance, write_instance

GOLDENS_PATH = Path(__file__).parent / "goldens" / "pinned_seed42.json"


def make_record(species_id, common_name=None, **kwargs):
    defaults = dict(
        common_name=common_name or species_id.replace("-", " ").title(),
        refined_summary=f"A small bird known as {species_id} with distinctive plumage.",
    )
    defaults.update(kwargs)
    return SpeciesRecord(species_id=species_id, **defaults)


@pytest.fixture
def bird_kb():
    """A handful of named records for resolution and KB tests."""
    return KnowledgeBase(
        [
            make_record(
                "orange-dove",
                "Orange dove",
                scientific_name="Ptilinopus victor",
                genus="Ptilinopus",
            ),
            make_record(
                "philippine-duck",
                "Philippine duck",
                scientific_name="Anas luzonica",
                genus="Anas",
            ),
            make_record(
                "izu-thrush",
                "Izu thrush",
                scientific_name="Turdus celaenops",
                genus="Turdus",
            ),
            make_record(
                "dune-lark",
                "Dune lark",
                scientific_name="Calendulauda erythrochlamys",
                genus="Calendulauda",
            ),
        ]
    )


@pytest.fixture(scope="session")
def small_instance():
    cfg = SimConfig(
        n_species=30,
        chunks_per_species=2,
        anchors_per_species=2,
        latent_dim=16,
        n_queries=12,
        seed=11,
    )
    return generate_instance(cfg)


@pytest.fixture(scope="session")
def pinned_instance():
    return generate_instance(SimConfig())


@pytest.fixture(scope="session")
def pinned_dir(pinned_instance, tmp_path_factory):
    out = tmp_path_factory.mktemp("pinned")
    write_instance(pinned_instance, out)
    return out


@pytest.fixture(scope="session")
def goldens():
    with open(GOLDENS_PATH, encoding="utf-8") as fh:
        return json.load(fh)
