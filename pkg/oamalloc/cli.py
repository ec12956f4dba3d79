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
import argparse
import logging
from pathlib import Path

from oamalloc.configuration import BACKENDS, SCHEMES, STRUCTURES, configuration
from oamalloc.exceptions import ConfigurationException


class CLI:
    @staticmethod
    def parse_arguments(argv=None):
        """
        Parse benchmark arguments
        :param argv: list of str, sys.argv[1:] if omitted
        :return args:
        """
        parser = argparse.ArgumentParser(
            description="Throughput benchmark of lock-free structures "
            "under optimistic access reclamation",
            prog="oamalloc-bench",
        )
        parser.add_argument(
            "-d",
            "--debug",
            help="turn on debugging output",
            action="store_true",
            default=False,
        )
        parser.add_argument(
            "-c", "--configuration", help="use custom YAML configuration", default=""
        )
        parser.add_argument(
            "-v",
            "--version",
            help="display program version",
            action="version",
            version=f"%(prog)s {configuration.version}",
        )
        parser.add_argument("--structure", choices=STRUCTURES, help="list or map")
        parser.add_argument("--prefill", type=int, help="keys inserted before timing")
        parser.add_argument("--search", type=int, help="percentage of searches")
        parser.add_argument("--insert", type=int, help="percentage of inserts")
        parser.add_argument("--remove", type=int, help="percentage of removes")
        threads = parser.add_mutually_exclusive_group()
        threads.add_argument("--threads", type=int, help="number of worker threads")
        threads.add_argument(
            "--sweep", help="thread counts to run, e.g. 1..32 or 1,2,4,8"
        )
        parser.add_argument("--duration", type=float, help="seconds per run")
        parser.add_argument("--runs", type=int, help="runs per thread count")
        parser.add_argument("--warmup", type=float, help="untimed seconds per run")
        parser.add_argument("--scheme", choices=SCHEMES, help="reclamation scheme")
        parser.add_argument("--backend", choices=BACKENDS, help="virtual memory backend")
        parser.add_argument("--seed", type=int, help="base seed of the workers")
        parser.add_argument("--csv", help="write one row per run to this file")
        parser.add_argument(
            "--limbo-capacity", dest="limbo_capacity", type=int, help="R"
        )
        parser.add_argument(
            "--scan-threshold", dest="scan_threshold", type=int, help="X"
        )
        parser.add_argument("--hazard-slots", dest="hazard_slots", type=int, help="K")

        args = parser.parse_args(argv)
        return args

    @staticmethod
    def get_configuration(args):
        """
        Load the configuration file, then apply the arguments given on the
        command line on top of it
        """
        if args.configuration:
            args.configuration = Path(args.configuration).resolve()
            if not args.configuration.is_file():
                raise ConfigurationException(
                    f"Supplied configuration file is not found: {args.configuration}"
                )
        configuration.configuration = args.configuration
        configuration.load_configuration()
        if args.debug:
            configuration.debug = True
            configuration.logger.setLevel(logging.DEBUG)
        for key, value in vars(args).items():
            if value is not None and key not in ("configuration", "debug"):
                setattr(configuration, key, value)
        if args.threads is not None:
            configuration.sweep = ""
        return configuration
