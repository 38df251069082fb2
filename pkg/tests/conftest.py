import pytest

from slu_intent.data import ToySpec, generate_toy_dataset

TOY_SPEC = dict(
    actions=["increase", "decrease", "bring"],
    objects=["heat", "lights", "music", "shoes"],
    locations=["kitchen", "none"],
    wordings_per_intent=2,
    utterances_per_wording=10,
    seed=1,
)


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("toy")
    records = generate_toy_dataset(ToySpec(**TOY_SPEC), out)
    return out, records
