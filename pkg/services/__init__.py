"""Road network and queue simulation engines"""
