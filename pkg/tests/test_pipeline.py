import numpy as np
import pytest

from patchpcc import container as ctr
from patchpcc.errors import FormatMismatchError, MalformedStreamError
from patchpcc.geometry import PointCloud
from patchpcc.model import CodecModel
from patchpcc.pipeline import CodecSettings, compress, decode_codes, decompress, extended_settings, prepare
from patchpcc.synthetic import sphere_with_handle


@pytest.fixture(scope="module")
def cloud():
    return PointCloud(sphere_with_handle(1024, seed=1) * 3.0 + 5.0)


@pytest.fixture(scope="module")
def model():
    return CodecModel(k=64, seed=2)


def test_prepare_uses_decoded_centroids(cloud):
    s = CodecSettings(K=128, roc=0.5)
    prep = prepare(cloud, s)
    from patchpcc.octree import octree_decode
    np.testing.assert_array_equal(prep.centroids, octree_decode(prep.octree))
    assert prep.patchset.patches.shape == (len(prep.centroids), 128, 3)
    assert prep.centroid_bits <= 0.5 * 1024
    assert np.abs(prep.cloud.denormalized().points - cloud.points).max() < 1e-9 * 8


@pytest.mark.parametrize("settings", [
    CodecSettings(K=128, roc=0.5),
    CodecSettings(K=128, roc=0.5, raw_centroids=True),
    CodecSettings(K=128, roc=0.5, uniform_context=True),
    extended_settings(K=384, roc=0.5, seed=4),
])
def test_roundtrip_contract(cloud, model, settings):
    res = compress(cloud, model, settings)
    assert res.bpp == 8 * len(res.data) / len(cloud)
    out = decompress(res.data, model)
    m = out.container.n_centroids
    assert len(out.cloud) == m * settings.k
    assert np.array_equal(out.codes, res.codes)
    again = decompress(res.data, model)
    assert np.array_equal(again.cloud.points, out.cloud.points)
    assert compress(cloud, model, settings).data == res.data
    # coded latent size tracks the estimate within the coder overhead
    assert abs(res.latent_bpp - res.estimated_rate) <= 64 / len(cloud)
    lo, hi = cloud.points.min(0), cloud.points.max(0)
    assert (out.cloud.points > lo - 1.0).all() and (out.cloud.points < hi + 1.0).all()


def test_ablation_accounting(cloud, model):
    oct_ = compress(cloud, model, CodecSettings(K=128, roc=0.25))
    raw = compress(cloud, model, CodecSettings(K=128, roc=0.25, raw_centroids=True))
    assert raw.centroid_bpp == 96 * len(raw.prepared.centroids) / 1024
    assert raw.centroid_bpp > oct_.centroid_bpp


def test_model_mismatch_rejected(cloud, model):
    with pytest.raises(FormatMismatchError):
        compress(cloud, model, CodecSettings(K=256))
    data = compress(cloud, model, CodecSettings(K=128, roc=0.5)).data
    with pytest.raises(FormatMismatchError):
        decompress(data, CodecModel(k=32))
    with pytest.raises(FormatMismatchError):
        decompress(data, CodecModel(k=64, d=8))


def test_byte_flip_fuzz(cloud, model):
    settings = CodecSettings(K=128, roc=0.5)
    res = compress(cloud, model, settings)
    ref = decompress(res.data, model)
    rng = np.random.default_rng(0)
    positions = np.unique(np.r_[np.arange(ctr.HEADER_BYTES + 8), rng.integers(0, len(res.data), 200)])
    for pos in positions:
        bad = bytearray(res.data)
        bad[pos] ^= int(rng.integers(1, 256))
        try:
            out = decompress(bytes(bad), model)
        except (MalformedStreamError, FormatMismatchError):
            continue
        # accepted streams must visibly diverge from the original decode (header included)
        diverged = (out.header != ref.header or out.cloud.points.shape != ref.cloud.points.shape
                    or not np.array_equal(out.cloud.points, ref.cloud.points)
                    or not np.array_equal(out.codes, ref.codes))
        assert diverged, f"flip at byte {pos} went unnoticed"


def test_decode_codes_matches_encoder(cloud, model):
    res = compress(cloud, model, CodecSettings(K=128, roc=0.5))
    _, codes = decode_codes(ctr.unpack(res.data), model)
    assert np.array_equal(codes, res.codes)
