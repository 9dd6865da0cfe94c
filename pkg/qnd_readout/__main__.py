# qnd_readout/__main__.py

import fire
from pathlib import Path
from loguru import logger

from .cli import commands
from .core.version import __version__

class CLI:
    """Repetitive QND readout simulator, calibrator and HMM decoder"""

    def __init__(self):
        """Initialize CLI with default config path"""
        self.default_config_path = Path.home() / ".config" / "qnd-readout" / "config.yml"

    def version(self) -> str:
        """Print the package version"""
        return __version__

    def init(self, config: str | None = None, force: bool = False) -> None:
        """Write the packaged default configuration (log settings and suites) to a file"""
        config_path = Path(config) if config else self.default_config_path
        commands.ensure_config_exists(config_path, force)
        logger.info(f"Configuration initialized at {config_path}")

    def simulate(
        self,
        out: str,
        config: str | None = None,
        suite: str | None = None,
        seed: int | None = None,
        threads: int | None = None,
        force: bool = False,
        verbose: bool = False,
    ) -> None:
        """Simulate labeled charge-sensor traces

        Args:
            out: Trace batch path, .csv or .npy; truth and manifest sidecars are written next to it
            config: Path to a YAML config file (optional)
            suite: Named parameter suite from the packaged defaults (optional)
            seed: Master seed override (optional)
            threads: Worker threads; results do not depend on it
            force: Overwrite existing outputs
            verbose: Log at DEBUG level
        """
        return commands.simulate(out, config, suite, seed, threads, force, verbose)

    def calibrate(
        self,
        traces: str,
        out: str,
        config: str | None = None,
        suite: str | None = None,
        t_r_grid: list[float] | None = None,
        n_bins: int | None = None,
        pseudo_count: float | None = None,
        sweep_out: str | None = None,
        force: bool = False,
        verbose: bool = False,
    ) -> None:
        """Build peak-signal histograms and pick the optimal readout time

        Args:
            traces: Trace batch written by `simulate` (or any file in that format)
            out: Calibration JSON path
            t_r_grid: Readout times to sweep in seconds (default: every sample instant)
            n_bins: Histogram bins
            pseudo_count: Additive smoothing per bin
            sweep_out: Optional CSV of eps1, eps0, eps_avg per readout time
        """
        return commands.calibrate(
            traces, out, config, suite, t_r_grid, n_bins, pseudo_count, sweep_out, force, verbose
        )

    def records(
        self,
        traces: str,
        calibration: str,
        out: str,
        kind: str = "peak",
        config: str | None = None,
        suite: str | None = None,
        force: bool = False,
        verbose: bool = False,
    ) -> None:
        """Convert a trace batch into readout records

        Args:
            kind: "peak" for peak signals at the calibrated readout time, "binary" for thresholded bits
        """
        return commands.records(traces, calibration, out, kind, config, suite, force, verbose)

    def decode(
        self,
        records: str,
        out: str,
        mode: str = "hard",
        calibration: str | None = None,
        t1: float | None = None,
        priors: list[float] | None = None,
        config: str | None = None,
        suite: str | None = None,
        force: bool = False,
        verbose: bool = False,
    ) -> None:
        """Decode readout records

        Args:
            records: Records JSON
            out: Decisions JSON path
            mode: hard, soft or majority
            calibration: Calibration JSON; required for soft mode
            t1: Logical relaxation time assumed by the decoder (ignored by majority)
            priors: (P(x0=1), P(x0=0))
        """
        return commands.decode(records, out, mode, calibration, t1, priors, config, suite, force, verbose)

    def benchmark(
        self,
        out_dir: str,
        config: str | None = None,
        suite: str | None = None,
        seed: int | None = None,
        threads: int | None = None,
        force: bool = False,
        plot_data: bool = False,
        low_snr: bool = True,
        verbose: bool = False,
    ) -> None:
        """Run the full study: error curves, per-cycle probabilities, sweeps and fits

        Args:
            out_dir: Output directory, created if missing
            plot_data: Also write figure-shaped CSV datasets
            low_snr: Include the added-noise comparison of soft and hard decoding
        """
        return commands.benchmark(out_dir, config, suite, seed, threads, force, plot_data, low_snr, verbose)

    def fit_t1(
        self,
        probabilities: str,
        out: str | None = None,
        config: str | None = None,
        suite: str | None = None,
        force: bool = False,
        verbose: bool = False,
    ) -> None:
        """Fit the logical T1 to single-repetition probabilities (time,p1,p0 CSV or per_cycle.csv)"""
        return commands.fit_t1(probabilities, out, config, suite, force, verbose)

    def fit_prep_error(
        self,
        experiment: str,
        simulated: str,
        out: str | None = None,
        mode: str = "hard",
        config: str | None = None,
        suite: str | None = None,
        force: bool = False,
        verbose: bool = False,
    ) -> None:
        """Fit preparation errors from an error-curve JSON and its error-free reference"""
        return commands.fit_prep_error(experiment, simulated, out, mode, config, suite, force, verbose)

def main():
    fire.Fire(CLI)

if __name__ == "__main__":
    main()
