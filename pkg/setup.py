#!/usr/bin/env python
# encoding: utf-8
#
# This file is part of macml-select

import setuptools

if __name__ == '__main__':
    setuptools.setup()
