"""
Output Templates Module

Static pieces of every emitted table, kept apart from the code that fills
them in.

Files:
- tables.py: CSV column layouts per subcommand (one-based spin/mode labels)
"""
