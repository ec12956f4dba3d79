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
import sys

import pytest

from oamalloc.alloc_api import Allocator
from oamalloc.configuration import configuration
from oamalloc.vm_backend import BackendKind, VirtualMemory

LINUX = sys.platform.startswith("linux")
linux_only = pytest.mark.skipif(not LINUX, reason="needs Linux mappings")
GIL_ENABLED = getattr(sys, "_is_gil_enabled", lambda: True)()

ALL_BACKENDS = [
    pytest.param(kind, marks=[] if VirtualMemory.supports(kind) else [pytest.mark.skip])
    for kind in BackendKind
]


def prepare_conf():
    configuration.set_logging(level=10)
    configuration.debug = True
    return configuration


@pytest.fixture
def allocator():
    """Small isolated allocator: 64 KiB superblocks keep tests quick"""
    allocator = Allocator(
        superblock_size=64 * 1024, max_class_size=16 * 1024, cache_capacity=16
    )
    yield allocator
    allocator.thread_exit()


@pytest.fixture(params=ALL_BACKENDS, ids=lambda kind: kind.value)
def backend_allocator(request):
    allocator = Allocator(
        backend=request.param,
        superblock_size=64 * 1024,
        max_class_size=16 * 1024,
        cache_capacity=16,
    )
    yield allocator
    allocator.thread_exit()
