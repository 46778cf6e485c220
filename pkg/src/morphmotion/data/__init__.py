"""Bundled example robots and tasks as JSON documents."""
