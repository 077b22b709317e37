"""Session fixtures: the canonical desk-scale world, trained models and
packed bundles shared across test modules (training happens once)."""

import numpy as np
import pytest

from mededge import infer as inf
from mededge import meddata as md
from mededge import modelpack as mp
from mededge import network as nw
from mededge import train as tr

DESK_SEED = 42


@pytest.fixture(scope="session")
def desk_world():
    return md.generate_world(md.DESK_N_SYMPTOMS, md.DESK_N_DISEASES, seed=DESK_SEED)


@pytest.fixture(scope="session")
def desk_vocab():
    return md.SymptomVocabulary.generate(md.DESK_N_SYMPTOMS)


@pytest.fixture(scope="session")
def desk_catalog():
    return md.DiseaseCatalog.generate(md.DESK_N_DISEASES, seed=DESK_SEED)


@pytest.fixture(scope="session")
def desk_data(desk_world):
    xtr, ytr = md.samples_to_arrays(md.sample_dataset(desk_world, 20_000, seed=42))
    xte, yte = md.samples_to_arrays(md.sample_dataset(desk_world, 2_000, seed=43))
    return {"xtr": xtr, "ytr": ytr, "xte": xte, "yte": yte}


@pytest.fixture(scope="session")
def trained_desk_graph(desk_data):
    graph = nw.desk_scale_dnn(seed=DESK_SEED)
    tr.train_classifier(
        graph, (desk_data["xtr"], desk_data["ytr"]), tr.DESK_DNN_PRESET
    )
    graph.mode = nw.INFERENCE
    return graph


@pytest.fixture(scope="session")
def desk_bundles(trained_desk_graph, tmp_path_factory):
    out = tmp_path_factory.mktemp("bundles")
    frozen = mp.prune_for_inference(mp.freeze(trained_desk_graph))
    f32_path = out / "desk_f32.emed"
    q8_path = out / "desk_q8.emed"
    mp.pack_bundle(frozen, quantize=False, out_path=f32_path)
    mp.pack_bundle(frozen, quantize=True, out_path=q8_path)
    return {"f32": f32_path, "q8": q8_path}


@pytest.fixture(scope="session")
def skin_train_data():
    return md.samples_to_arrays(md.gen_skin_dataset(20, seed=DESK_SEED))


@pytest.fixture(scope="session")
def trained_skin_graph(skin_train_data):
    x, y = skin_train_data
    graph = nw.build_skin_cnn(seed=DESK_SEED, bn_decay=tr.DESK_CNN_BN_DECAY)
    cfg = tr.TrainConfig(
        epochs=10,
        batch_size=64,
        lr0=0.003,
        lr_decay=0.7,
        epochs_per_decay=6,
        weight_decay=0.00004,
        seed=DESK_SEED,
    )
    tr.train_classifier(graph, (x, y), cfg)
    graph.mode = nw.INFERENCE
    return graph


@pytest.fixture(scope="session")
def skin_bundles(trained_skin_graph, tmp_path_factory):
    out = tmp_path_factory.mktemp("skin")
    frozen = mp.prune_for_inference(mp.freeze(trained_skin_graph))
    f32_path = out / "skin_f32.emed"
    q8_path = out / "skin_q8.emed"
    mp.pack_bundle(frozen, quantize=False, out_path=f32_path)
    mp.pack_bundle(frozen, quantize=True, out_path=q8_path)
    return {"f32": f32_path, "q8": q8_path}


@pytest.fixture(scope="session")
def big_bundles(tmp_path_factory):
    """Full-width random-init model: >=1M parameters, f32 blob >=20 MB."""
    out = tmp_path_factory.mktemp("big")
    graph = nw.full_scale_dnn(seed=DESK_SEED)
    frozen = mp.prune_for_inference(mp.freeze(graph))
    f32_path = out / "full_f32.emed"
    q8_path = out / "full_q8.emed"
    f32_layout = mp.pack_bundle(frozen, quantize=False, out_path=f32_path)
    q8_layout = mp.pack_bundle(frozen, quantize=True, out_path=q8_path)
    return {
        "f32": f32_path,
        "q8": q8_path,
        "f32_layout": f32_layout,
        "q8_layout": q8_layout,
    }


@pytest.fixture(scope="session")
def desk_handle_f32(desk_bundles):
    h = inf.load_bundle(desk_bundles["f32"], cache_policy="none")
    yield h
    h.close()


@pytest.fixture(scope="session")
def desk_handle_q8(desk_bundles):
    h = inf.load_bundle(desk_bundles["q8"], cache_policy="per-layer")
    yield h
    h.close()
