import pickle

import pytest

from h2t.core.errors import ConfigError, H2TError, NumericError, ShapeError, ValidationError


@pytest.mark.parametrize("error", [
    ShapeError("features", (4, 2), (4, 3)),
    ConfigError("fusion.p", "must lie in [0, 1]"),
    NumericError("non-finite loss", step=12),
])
def test_errors_survive_worker_pickling(error):
    again = pickle.loads(pickle.dumps(error))
    assert type(again) is type(error)
    assert str(again) == str(error)


def test_hierarchy():
    error = ConfigError("seeds", "at least one seed is required")
    assert isinstance(error, ValidationError)
    assert isinstance(error, ValueError)
    assert isinstance(error, H2TError)
    assert error.field == "seeds"
    assert NumericError("nan", step=3).step == 3
