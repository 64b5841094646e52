#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Utils Package
Configuration, output writing and the worker pool
"""
