#!/usr/bin/env python3
# encoding: utf-8
#
# This file is part of macml-select

__version__ = '0.1.0'
