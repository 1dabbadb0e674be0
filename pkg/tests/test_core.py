import pytest

from vesselid.core import (
    Annotation,
    BBox,
    DEFAULT_GENERA,
    GenusCatalog,
    ProbabilityVector,
    Review,
    Source,
    UnknownGenusError,
    argmax_class,
    class_index,
)


@pytest.fixture
def catalog():
    return GenusCatalog()


def test_default_catalog_is_the_nine_genera(catalog):
    assert len(catalog) == 9
    assert catalog.genera == DEFAULT_GENERA


def test_class_index_first_and_last(catalog):
    assert class_index(catalog, "Acacia") == 0
    assert class_index(catalog, "Schima") == 8


def test_class_index_unknown_names_offender(catalog):
    with pytest.raises(UnknownGenusError, match="Quercus"):
        class_index(catalog, "Quercus")


def test_class_index_is_bijection(catalog):
    for i, name in enumerate(catalog):
        assert class_index(catalog, name) == i
        assert catalog.name(i) == name


def test_catalog_rejects_duplicates_and_empty():
    with pytest.raises(ValueError):
        GenusCatalog(("Fagus", "Fagus"))
    with pytest.raises(ValueError):
        GenusCatalog(())
    with pytest.raises(ValueError):
        GenusCatalog(("Fagus", ""))


def test_catalog_file_round_trip(tmp_path, catalog):
    path = tmp_path / "genera.txt"
    catalog.to_file(path)
    assert GenusCatalog.from_file(path) == catalog


def test_argmax_one_hot(catalog):
    p = ProbabilityVector((1.0,) + (0.0,) * 8)
    assert argmax_class(catalog, p) == "Acacia"


def test_argmax_uniform_breaks_tie_to_first(catalog):
    p = ProbabilityVector((1 / 9.0,) * 9)
    assert argmax_class(catalog, p) == "Acacia"


def test_argmax_picks_peak(catalog):
    p = ProbabilityVector((0.1, 0.7, 0.2) + (0.0,) * 6)
    assert argmax_class(catalog, p) == "Betula"


def test_argmax_scale_invariant(catalog):
    scores = (0.02, 0.07, 0.01, 0.05, 0.03, 0.04, 0.06, 0.02, 0.01)
    base = argmax_class(catalog, ProbabilityVector(scores))
    for c in (2.0, 10.0, 0.5):
        scaled = ProbabilityVector(tuple(min(1.0, s * c) for s in scores))
        assert argmax_class(catalog, scaled) == base


def test_argmax_length_mismatch(catalog):
    with pytest.raises(ValueError):
        argmax_class(catalog, ProbabilityVector((0.5, 0.5)))


def test_probability_vector_rejects_empty_and_nonfinite():
    with pytest.raises(ValueError):
        ProbabilityVector(())
    with pytest.raises(ValueError):
        ProbabilityVector((0.5, float("nan")))
    with pytest.raises(ValueError):
        ProbabilityVector((0.5, 1.5))


def test_bbox_validity():
    with pytest.raises(ValueError):
        BBox(10, 0, 10, 5)
    b = BBox(0, 0, 10, 20)
    assert b.width == 10 and b.height == 20 and b.area == 200


def test_bbox_clip():
    b = BBox(-5, -5, 15, 15)
    c = b.clip(10, 10)
    assert (c.x_min, c.y_min, c.x_max, c.y_max) == (0, 0, 10, 10)
    assert BBox(20, 20, 30, 30).clip(10, 10) is None


def test_annotation_invariants():
    box = BBox(0, 0, 10, 10)
    # human must be accepted
    with pytest.raises(ValueError):
        Annotation("a1", "s1", box, source=Source.HUMAN, review=Review.PENDING)
    # confidence iff predicted
    with pytest.raises(ValueError):
        Annotation("a1", "s1", box, source=Source.HUMAN, confidence=0.5)
    with pytest.raises(ValueError):
        Annotation("a1", "s1", box, source=Source.PREDICTED, review=Review.PENDING)
    ok = Annotation("a1", "s1", box, source=Source.PREDICTED, review=Review.PENDING, confidence=0.8)
    assert ok.version == 1
