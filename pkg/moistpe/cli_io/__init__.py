"""Config files, snapshots, CSV output and subcommand dispatch."""
