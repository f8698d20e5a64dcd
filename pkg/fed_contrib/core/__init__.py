"""Models, data, contribution scoring, federated rounds and experiment configuration"""
