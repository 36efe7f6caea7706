import json

import pytest

from posinv.cli import main

PROMPT = {"prefix": "SYS: ", "documents": ["alpha doc", "bravo doc", "chrly"], "suffix": " Q?"}
SCAN = {
    "prefix": "SYS: ",
    "needle": "the answer is 42",
    "gold": "42",
    "distractors": ["nothing here", "irrelevant", "also empty"],
    "suffix": " Q?",
    "metric": "gold_token_logprob",
}


@pytest.fixture(scope="module")
def model_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("model")
    w, c = str(d / "w.bin"), str(d / "c.txt")
    assert main(["init", "--model", w, "--config", c, "--seed", "7",
                 "--n-layers", "1", "--n-heads", "2", "--n-kv-heads", "1",
                 "--d-head", "16", "--d-ff", "64"]) == 0
    return w, c


@pytest.fixture()
def prompt_file(tmp_path):
    path = tmp_path / "prompt.json"
    path.write_text(json.dumps(PROMPT))
    return str(path)


def run_cli(args):
    return main(args)


class TestRun:
    def test_determinism(self, model_files, prompt_file, capsys):
        w, c = model_files
        args = ["run", "--model", w, "--config", c, "--prompt", prompt_file,
                "--mode", "pine", "--max-new-tokens", "6"]
        assert run_cli(args) == 0
        first = capsys.readouterr().out
        assert run_cli(args) == 0
        assert capsys.readouterr().out == first

    def test_k1_pine_equals_vanilla(self, model_files, tmp_path, capsys):
        w, c = model_files
        p = tmp_path / "p.json"
        p.write_text(json.dumps({"prefix": "S", "documents": ["one doc"], "suffix": "Q"}))
        outs = {}
        for mode in ("pine", "vanilla"):
            assert run_cli(["run", "--model", w, "--config", c, "--prompt", str(p),
                            "--mode", mode, "--max-new-tokens", "8"]) == 0
            outs[mode] = capsys.readouterr().out
        assert outs["pine"] == outs["vanilla"]

    def test_permuted_prompt_same_text(self, model_files, tmp_path, capsys):
        w, c = model_files
        outs = []
        for docs in (PROMPT["documents"], PROMPT["documents"][::-1]):
            p = tmp_path / "p.json"
            p.write_text(json.dumps({**PROMPT, "documents": docs}))
            assert run_cli(["run", "--model", w, "--config", c, "--prompt", str(p),
                            "--mode", "pine", "--max-new-tokens", "8"]) == 0
            outs.append(capsys.readouterr().out)
        assert outs[0] == outs[1]

    def test_report_written(self, model_files, prompt_file, tmp_path, capsys):
        w, c = model_files
        report = tmp_path / "report.json"
        assert run_cli(["run", "--model", w, "--config", c, "--prompt", prompt_file,
                        "--mode", "pine", "--max-new-tokens", "2",
                        "--report-out", str(report)]) == 0
        capsys.readouterr()
        data = json.loads(report.read_text())
        assert data["artifact_version"] == "1"
        assert "config_hash" in data
        assert data["results"]["mode"] == "pine"


class TestCompare:
    def test_lists_all_modes(self, model_files, prompt_file, capsys):
        w, c = model_files
        assert run_cli(["compare", "--model", w, "--config", c, "--prompt", prompt_file,
                        "--modes", "vanilla,pine,pcw", "--max-new-tokens", "3"]) == 0
        out = capsys.readouterr().out
        for mode in ("vanilla", "pine", "pcw"):
            assert mode in out


class TestInvariance:
    def test_expected_behavior_exit_zero(self, model_files, prompt_file, capsys):
        w, c = model_files
        code = run_cli(["invariance", "--model", w, "--config", c, "--prompt", prompt_file,
                        "--modes", "pine,pcw,sp,vanilla", "--max-new-tokens", "4"])
        capsys.readouterr()
        assert code == 0

    def test_k1_prompt_usage_error(self, model_files, tmp_path, capsys):
        w, c = model_files
        p = tmp_path / "p.json"
        p.write_text(json.dumps({"prefix": "S", "documents": ["x"], "suffix": "Q"}))
        code = run_cli(["invariance", "--model", w, "--config", c, "--prompt", str(p)])
        capsys.readouterr()
        assert code == 1


class TestBiasScan:
    def test_pine_flat_vanilla_reported(self, model_files, tmp_path, capsys):
        w, c = model_files
        scan = tmp_path / "scan.json"
        scan.write_text(json.dumps(SCAN))
        assert run_cli(["bias-scan", "--model", w, "--config", c, "--scan", str(scan),
                        "--modes", "vanilla,pine"]) == 0
        lines = [l for l in capsys.readouterr().out.splitlines() if l.startswith("pine\t")]
        values = [float(l.split("\t")[2]) for l in lines]
        assert len(values) == 4
        assert max(values) - min(values) <= 1e-4

    def test_missing_scan_key(self, model_files, tmp_path, capsys):
        w, c = model_files
        scan = tmp_path / "scan.json"
        scan.write_text(json.dumps({"prefix": "S"}))
        code = run_cli(["bias-scan", "--model", w, "--config", c, "--scan", str(scan)])
        capsys.readouterr()
        assert code == 1


class TestBench:
    def test_reports_ratio_and_counts(self, model_files, prompt_file, capsys):
        w, c = model_files
        assert run_cli(["bench", "--model", w, "--config", c, "--prompt", prompt_file,
                        "--modes", "vanilla,pine", "--repeats", "3",
                        "--max-new-tokens", "2"]) == 0
        out = capsys.readouterr().out
        assert "ratio_vs_vanilla" in out
        assert "comparator_invocations_per_decoded_token" in out

    def test_too_few_repeats(self, model_files, prompt_file, capsys):
        w, c = model_files
        code = run_cli(["bench", "--model", w, "--config", c, "--prompt", prompt_file,
                        "--repeats", "2"])
        capsys.readouterr()
        assert code == 1


class TestExitCodes:
    def test_usage_error(self, capsys):
        assert run_cli(["run"]) == 1
        capsys.readouterr()

    def test_io_error(self, tmp_path, prompt_file, capsys):
        code = run_cli(["run", "--model", str(tmp_path / "missing.bin"),
                        "--config", str(tmp_path / "missing.txt"),
                        "--prompt", prompt_file, "--mode", "pine"])
        capsys.readouterr()
        assert code == 2
