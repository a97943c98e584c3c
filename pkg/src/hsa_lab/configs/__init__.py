"""Run-config presets shipped with the package, loadable by name."""
