"""Test suite for the federated contribution simulator"""
