# -*- coding: utf-8 -*-
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program.  If not, see <http://www.gnu.org/licenses/>.

from pathlib import Path

import pytest

from oamalloc.configuration import configuration, Configuration
from oamalloc.exceptions import ConfigurationException


class TestLoadLocalConf:
    """This class contains tests for loading the oamalloc
    configuration from conf.yaml"""

    def setup_method(self):
        """Every test starts from a fresh Configuration"""
        configuration.set_logging(level=10)
        self.conf = Configuration()

    def teardown_method(self, method):
        """Teardown any state that was previously setup with a setup_method
        call.
        """

    @pytest.fixture
    def sample_conf(self):
        """Return a sample configuration file"""
        return Path(__file__).parent / "src/sample_conf.yaml"

    @pytest.fixture
    def bad_scheme_conf(self):
        return Path(__file__).parent / "src/bad_scheme_conf.yaml"

    @pytest.fixture
    def unknown_items_conf(self):
        return Path(__file__).parent / "src/unknown_items_conf.yaml"

    @pytest.fixture
    def list_conf(self):
        """A YAML document that is not a mapping"""
        return Path(__file__).parent / "src/list_conf.yaml"

    def test_defaults(self, tmp_path, monkeypatch):
        """Without conf.yaml in cwd the defaults stay"""
        monkeypatch.chdir(tmp_path)
        self.conf.load_configuration()
        assert self.conf.scheme == "ver"
        assert self.conf.limbo_capacity == 64
        assert self.conf.effective_scan_threshold == 32
        assert self.conf.hazard_slots == 3
        assert self.conf.effective_shared_region_length == self.conf.superblock_size
        self.conf.validate()

    def test_conf_in_cwd(self, tmp_path, monkeypatch, sample_conf):
        (tmp_path / "conf.yaml").write_text(sample_conf.read_text())
        monkeypatch.chdir(tmp_path)
        self.conf.load_configuration()
        assert self.conf.scheme == "bit"

    def test_non_existing_conf(self):
        """Test if a missing configuration file generates an error"""
        self.conf.configuration = "/nonexistent/conf.yaml"
        with pytest.raises(ConfigurationException):
            self.conf.load_configuration()

    def test_sample_conf(self, sample_conf):
        self.conf.configuration = sample_conf
        self.conf.load_configuration()
        assert self.conf.backend == "advise"
        assert self.conf.scheme == "bit"
        assert self.conf.limbo_capacity == 32
        assert self.conf.effective_scan_threshold == 16
        assert self.conf.structure == "list"
        assert self.conf.threads == 4
        # untouched keys keep their defaults
        assert self.conf.insert == 25

    def test_unknown_items_ignored(self, unknown_items_conf):
        self.conf.configuration = unknown_items_conf
        self.conf.load_configuration()
        assert self.conf.scheme == "none"
        assert not hasattr(self.conf, "epoch_length")

    def test_not_a_mapping(self, list_conf):
        self.conf.configuration = list_conf
        with pytest.raises(ConfigurationException):
            self.conf.load_configuration()

    def test_invalid_scheme(self, bad_scheme_conf):
        self.conf.configuration = bad_scheme_conf
        self.conf.load_configuration()
        with pytest.raises(ConfigurationException, match="scheme"):
            self.conf.validate()

    @pytest.mark.parametrize(
        "item, value",
        [
            ("backend", "swap"),
            ("superblock_size", 4097),
            ("max_class_size", 4 * 1024 * 1024),
            ("cache_capacity", 0),
            ("flush_fraction", 0),
            ("shared_region_length", 3 * 1024 * 1024),
            ("limbo_capacity", 0),
            ("scan_threshold", 64),
            ("hazard_slots", 2),
        ],
    )
    def test_invalid_items(self, item, value):
        setattr(self.conf, item, value)
        with pytest.raises(ConfigurationException, match=item):
            self.conf.validate()

    def test_debug_raises_log_level(self, tmp_path):
        conf_file = tmp_path / "conf.yaml"
        conf_file.write_text("debug: true\n")
        self.conf.configuration = conf_file
        self.conf.load_configuration()
        assert self.conf.debug
        assert self.conf.logger.level == 10
