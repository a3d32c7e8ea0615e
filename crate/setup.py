"""Builds the Rust extension module with cargo and drops it into the package.

No Rust-aware build backend is assumed; the only requirements are setuptools
and a working cargo toolchain.
"""

import subprocess
import sys
from pathlib import Path

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

ROOT = Path(__file__).parent.resolve()


class CargoExtension(Extension):
    def __init__(self, name, manifest, lib_name):
        super().__init__(name, sources=[])
        self.manifest = manifest
        self.lib_name = lib_name


class CargoBuildExt(build_ext):
    def build_extension(self, ext):
        subprocess.run(
            [
                "cargo",
                "build",
                "--release",
                "--manifest-path",
                str(ROOT / ext.manifest),
            ],
            check=True,
        )
        suffix = ".dylib" if sys.platform == "darwin" else ".so"
        built = ROOT / "target" / "release" / f"lib{ext.lib_name}{suffix}"
        dest = Path(self.get_ext_fullpath(ext.name))
        dest.parent.mkdir(parents=True, exist_ok=True)
        self.copy_file(str(built), str(dest))


setup(
    ext_modules=[
        CargoExtension("tds_hinf._native", "crates/py/Cargo.toml", "tds_hinf_py")
    ],
    cmdclass={"build_ext": CargoBuildExt},
)
