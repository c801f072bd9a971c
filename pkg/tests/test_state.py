"""Device state file: serialization round-trips, wiping, env override."""

import pytest

from twofe.errors import EncodingError
from twofe.state import (
    DeviceState,
    load_state,
    save_state,
    state_path_from_env,
)


def sample_state() -> DeviceState:
    return DeviceState(
        role="primary", device_id=b"\x01" * 16, account_id="alice",
        peer_device_id=b"\x02" * 16, own_share=12345,
        sub_share_peer=777, sub_share_cloud=999, held_for_peer=4242,
        pk=b"\x03" * 32, catalog_key=b"\x04" * 32,
        session_token=b"\x05" * 32, epoch=3, enrolled=True)


class TestSerialization:
    def test_roundtrip(self, tmp_path):
        path = str(tmp_path / "dev.state")
        st = sample_state()
        save_state(st, path)
        back = load_state(path)
        assert back == st

    def test_reserved_wrapping_key_field_survives(self, tmp_path):
        st = sample_state()
        st.wrapping_key = b"future"
        path = str(tmp_path / "dev.state")
        save_state(st, path)
        assert load_state(path).wrapping_key == b"future"

    def test_bad_version_rejected(self, tmp_path):
        path = str(tmp_path / "dev.state")
        save_state(sample_state(), path)
        data = bytearray(open(path, "rb").read())
        data[0] = 99
        open(path, "wb").write(bytes(data))
        with pytest.raises(EncodingError):
            load_state(path)

    def test_truncation_rejected(self, tmp_path):
        path = str(tmp_path / "dev.state")
        save_state(sample_state(), path)
        data = open(path, "rb").read()
        open(path, "wb").write(data[:-10])
        with pytest.raises(EncodingError):
            load_state(path)


class TestWipe:
    def test_wipe_clears_all_share_material(self):
        st = sample_state()
        st.wipe_shares()
        assert st.own_share == st.sub_share_peer == st.sub_share_cloud \
            == st.held_for_peer == 0
        assert st.session_token == b""
        assert st.invalidated and not st.enrolled


class TestEnvOverride:
    def test_twofe_state_wins(self, monkeypatch):
        monkeypatch.setenv("TWOFE_STATE", "/custom/path.state")
        assert state_path_from_env("/default") == "/custom/path.state"
        monkeypatch.delenv("TWOFE_STATE")
        assert state_path_from_env("/default") == "/default"
