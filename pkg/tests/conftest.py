import pytest

from smartbag import nn
from smartbag.dataset import default_profiles, generate


@pytest.fixture(scope="session")
def trained_model_blob():
    """One cheap trained model shared by the service-level tests."""
    data = generate(default_profiles(), 600, seed=0)
    spec = nn.ModelSpec()
    model, _ = nn.train(data, spec, nn.Hyperparams(epochs=10, seed=0))
    return nn.export_model(model, spec, data.classes)


@pytest.fixture(scope="session")
def model_file(tmp_path_factory, trained_model_blob):
    path = tmp_path_factory.mktemp("model") / "model.bagm"
    path.write_bytes(trained_model_blob)
    return str(path)
