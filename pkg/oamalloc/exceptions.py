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


class OamallocException(Exception):
    """ Generic exception when something goes wrong. """


class ConfigurationException(OamallocException):
    """ Invalid configuration or command line usage """


class AllocationException(OamallocException):
    """ The allocator could not obtain memory for a request """


class UnsupportedSizeException(AllocationException):
    """ Persistent allocation requested above the largest size class """


class InvalidFreeException(OamallocException):
    """ free_() called with an address the allocator does not own """


class VirtualMemoryException(OamallocException):
    """ Generic exception when an operating system mapping call fails """
