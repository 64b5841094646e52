#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Core Package
Dataset handling, model fitting and the analysis tracks
"""
