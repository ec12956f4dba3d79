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


import logging
import mmap
import os
from pathlib import Path
from typing import Dict, List, Optional

import yaml

from oamalloc.exceptions import ConfigurationException
from oamalloc.version import __version__

BACKENDS = ("keep", "advise", "shared")
SCHEMES = ("bit", "ver", "none")
STRUCTURES = ("list", "map")


class Configuration:
    # keys accepted from the YAML configuration file
    KNOWN_ITEMS: List[str] = [
        "backend",
        "superblock_size",
        "max_class_size",
        "cache_capacity",
        "flush_fraction",
        "shared_region_length",
        "scheme",
        "limbo_capacity",
        "scan_threshold",
        "hazard_slots",
        "structure",
        "prefill",
        "search",
        "insert",
        "remove",
        "threads",
        "sweep",
        "duration",
        "runs",
        "seed",
        "csv",
        "warmup",
        "debug",
    ]

    def __init__(self):
        self.version = __version__
        self.debug = False
        self.configuration = ""
        self.logger = None
        self.set_logging()
        # allocator
        self.backend = os.environ.get("OAMALLOC_BACKEND", "keep")
        self.page_size = mmap.PAGESIZE
        self.superblock_size = 2 * 1024 * 1024
        self.max_class_size = 16 * 1024
        self.cache_capacity = 64
        self.flush_fraction = 0.5
        # None means one shared region covering a whole superblock
        self.shared_region_length: Optional[int] = None
        # reclamation
        self.scheme = "ver"
        self.limbo_capacity = 64
        # None means limbo_capacity // 2
        self.scan_threshold: Optional[int] = None
        self.hazard_slots = 3
        # benchmark
        self.structure = "map"
        self.prefill = 10000
        self.search = 50
        self.insert = 25
        self.remove = 25
        self.threads = 1
        self.sweep = ""
        self.duration = 1.0
        self.runs = 10
        self.seed = 0
        self.csv = ""
        self.warmup = 0.1

    def set_logging(
        self,
        logger_name="oamalloc",
        level=logging.INFO,
        handler_class=logging.StreamHandler,
        handler_kwargs=None,
        msg_format="%(asctime)s.%(msecs).03d %(filename)-17s %(levelname)-6s %(message)s",
        date_format="%H:%M:%S",
    ):
        """
        Set personal logger for this library.
        :param logger_name: str, name of the logger
        :param level: int, see logging.{DEBUG,INFO,ERROR,...}: level of logger and handler
        :param handler_class: logging.Handler instance, default is StreamHandler (/dev/stderr)
        :param handler_kwargs: dict, keyword arguments to handler's constructor
        :param msg_format: str, formatting style
        :param date_format: str, date style in the logs
        :return: logger instance
        """
        logger = logging.getLogger(logger_name)
        logger.setLevel(level)

        if not [x for x in logger.handlers if isinstance(x, handler_class)]:
            handler_kwargs = handler_kwargs or {}
            handler = handler_class(**handler_kwargs)

            formatter = logging.Formatter(msg_format, date_format)
            handler.setFormatter(formatter)
            logger.addHandler(handler)

        self.logger = logger

    @property
    def effective_shared_region_length(self) -> int:
        return self.shared_region_length or self.superblock_size

    @property
    def effective_scan_threshold(self) -> int:
        if self.scan_threshold is None:
            return self.limbo_capacity // 2
        return self.scan_threshold

    def load_configuration(self):
        """Load configuration from a .yaml file, conf.yaml in cwd is optional"""
        if not self.configuration:
            path = Path.cwd() / "conf.yaml"
            if not path.is_file():
                self.logger.debug("No conf.yaml found, using defaults")
                return
            self.configuration = path
        path = Path(self.configuration)
        if not path.is_file():
            raise ConfigurationException(
                f"Supplied configuration file is not found: {path}"
            )
        with path.open() as ymlfile:
            file = yaml.safe_load(ymlfile) or {}
        if not isinstance(file, dict):
            raise ConfigurationException(f"{path} does not contain a mapping")
        for key, value in file.items():
            if key in self.KNOWN_ITEMS:
                setattr(self, key, value)
            else:
                self.logger.debug(f"Ignoring unknown configuration item {key!r}")
        if self.debug:
            self.logger.setLevel(logging.DEBUG)
        self.logger.debug(f"Loaded configuration from {path}")

    def validate(self):
        """
        Check the allocator and reclamation knobs
        :raises ConfigurationException: on the first invalid value
        """
        errors: Dict[str, str] = {}
        if self.backend not in BACKENDS:
            errors["backend"] = f"must be one of {', '.join(BACKENDS)}"
        if self.scheme not in SCHEMES:
            errors["scheme"] = f"must be one of {', '.join(SCHEMES)}"
        if self.superblock_size % self.page_size:
            errors["superblock_size"] = "must be a multiple of the page size"
        if self.max_class_size > self.superblock_size:
            errors["max_class_size"] = "must not exceed superblock_size"
        if self.cache_capacity < 1:
            errors["cache_capacity"] = "must be positive"
        if not 0 < self.flush_fraction <= 1:
            errors["flush_fraction"] = "must be in (0, 1]"
        length = self.effective_shared_region_length
        if (
            length < self.page_size
            or length > self.superblock_size
            or self.superblock_size % length
            or length % self.page_size
        ):
            errors["shared_region_length"] = (
                "must be a page multiple dividing superblock_size"
            )
        if self.limbo_capacity < 1:
            errors["limbo_capacity"] = "must be positive"
        if not 0 <= self.effective_scan_threshold < self.limbo_capacity:
            errors["scan_threshold"] = "must be below limbo_capacity"
        if self.hazard_slots < 3:
            errors["hazard_slots"] = "list operations need at least 3 slots"
        if errors:
            item, msg = next(iter(errors.items()))
            raise ConfigurationException(f"Invalid {item!r}: {msg}")


configuration = Configuration()
