import json
import subprocess
import sys
import time

import pytest

from fwdist.harness import (
    MalformedCsv,
    NoPayloadRoom,
    OverheadModel,
    _parse_csv,
    load_metrics_csv,
    overhead_report,
    progress_table,
    rate_table,
    retx_blocks,
    run_scenario,
    sweep,
)
from fwdist.scenario import ScenarioInvalid

CHAIN = {'nodes': [{'id': 'gw', 'parent': None}, {'id': 'n1', 'parent': 'gw'},
                   {'id': 'n2', 'parent': 'n1'}, {'id': 'n3', 'parent': 'n2'}]}


def chain_raw(**overrides):
    raw = {'strategy': 'concurrent', 'image_size': 640, 'chunk_size': 32,
           'seed': 7, 'duration_s': 900, 'topology': CHAIN}
    raw.update(overrides)
    return raw


def write_scenario(tmp_path, **overrides):
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(chain_raw(**overrides)))
    return path


# -- overhead calculator ----------------------------------------------------------------

def test_overhead_uncompressed_capacity_9():
    model = OverheadModel(mtu=128, name_bytes=16, structural_bytes=16,
                          link_header_bytes=23, signature_bytes=64)
    assert model.payload_capacity() == 9


def test_overhead_compressed_capacity_35():
    model = OverheadModel(compression_enabled=True)
    assert model.payload_capacity() == 35


def test_overhead_36kib_firmware():
    report = overhead_report(OverheadModel(), 36 * 1024)
    assert report == {"payload_capacity": 9, "chunk_count": 4096,
                      "signature_overhead_bytes": 262144}


def test_overhead_144kib_firmware():
    report = overhead_report(OverheadModel(), 144 * 1024)
    assert report == {"payload_capacity": 9, "chunk_count": 16384,
                      "signature_overhead_bytes": 1048576}


def test_overhead_no_payload_room():
    with pytest.raises(NoPayloadRoom):
        overhead_report(OverheadModel(mtu=100), 1024)


# -- run_scenario -----------------------------------------------------------------------

def test_run_scenario_emits_csv_and_summary(tmp_path):
    path = write_scenario(tmp_path)
    result, summary = run_scenario(path, out_dir=tmp_path / "out")
    lines = (tmp_path / "out" / "metrics.csv").read_text().splitlines()
    assert lines[0] == "sim_time_us,node,event,chunk_id,detail"
    assert summary["completions"] == 3
    saved = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert saved["completions"] == 3
    assert saved["nodes"]["n3"]["install_time_us"] == result.install_time("n3")


def test_run_scenario_duration_zero(tmp_path):
    path = write_scenario(tmp_path, duration_s=0)
    result, summary = run_scenario(path, out_dir=tmp_path / "out")
    lines = (tmp_path / "out" / "metrics.csv").read_text().splitlines()
    assert lines == ["sim_time_us,node,event,chunk_id,detail"]
    assert summary["completions"] == 0


def test_run_scenario_rank_correlated_completions(tmp_path):
    path = write_scenario(tmp_path, seed=3)
    result, _ = run_scenario(path)
    assert result.install_time("n1") < result.install_time("n3")


def test_run_scenario_invalid_strategy(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(chain_raw(strategy="warp")))
    with pytest.raises(ScenarioInvalid) as err:
        run_scenario(path)
    assert err.value.fieldname == "strategy"


def test_seed_override(tmp_path):
    path = write_scenario(tmp_path)
    r1, _ = run_scenario(path, seed=11)
    r2, _ = run_scenario(path, seed=11)
    r3, _ = run_scenario(path, seed=12)
    assert r1.records == r2.records
    assert r1.records != r3.records


# -- sweep --------------------------------------------------------------------------------

def test_sweep_row_count_and_order():
    table = sweep(chain_raw(), "chunk_count", [10, 20], [1, 2])
    assert [row[:2] for row in table["rows"]] == [(10, 1), (10, 2), (20, 1), (20, 2)]
    assert len(table["medians"]) == 2


def test_degenerate_sweep_matches_run():
    table = sweep(chain_raw(), "chunk_count", [20], [7])
    row = table["rows"][0]
    from fwdist.scenario import scenario_from_dict
    from fwdist.sim import run_simulation
    direct = run_simulation(scenario_from_dict(chain_raw()))
    assert row[2] == direct.completion_time_us(direct.completed_nodes())


def test_sweep_completion_medians_increase_with_chunk_count():
    # isolate the chunk-count effect: no loss, no poll stagger
    base = chain_raw(poll_stagger_s=0, loss={"per_transmission": 0.0, "collision": 0.0})
    table = sweep(base, "chunk_count", [10, 30, 60], [1, 2, 3])
    medians = [m for _, m in table["medians"]]
    assert all(m is not None for m in medians)
    assert medians[0] < medians[1] < medians[2]


def test_sweep_deterministic():
    a = sweep(chain_raw(), "chunk_count", [10, 20], [1, 2])
    b = sweep(chain_raw(), "chunk_count", [10, 20], [1, 2])
    assert a == b


def test_sweep_invalid_axis():
    with pytest.raises(ScenarioInvalid):
        sweep(chain_raw(), "nonsense", [1], [1])


# -- tables --------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def run_rows(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("csvrun")
    path = tmp / "scenario.json"
    path.write_text(json.dumps(chain_raw(image_size=1280)))
    run_scenario(path, out_dir=tmp / "out")
    return load_metrics_csv(tmp / "out" / "metrics.csv")


def test_csv_timestamps_non_decreasing(run_rows):
    times = [t for t, *_ in run_rows]
    assert times == sorted(times)


def test_install_preceded_by_chunk_count_datarecv(run_rows):
    # 1280 B / 32 B = 40 chunks per node
    for node in ("n1", "n2", "n3"):
        install_at = [t for t, n, ev, _, _ in run_rows if n == node and ev == "InstallComplete"]
        assert len(install_at) == 1
        received = [t for t, n, ev, cid, _ in run_rows
                    if n == node and ev == "DataRecv" and cid is not None and t <= install_at[0]]
        assert len(received) == 40


def test_progress_series_ends_at_chunk_count(run_rows):
    table = progress_table(run_rows)
    finals = {}
    for node, t, cumulative in table:
        finals[node] = cumulative
    assert finals == {"n1": 40, "n2": 40, "n3": 40}


def test_rate_table_partitions_datarecv(run_rows):
    total_recv = sum(1 for _, _, event, cid, _ in run_rows if event == "DataRecv" and cid is not None)
    table = rate_table(run_rows)
    assert sum(count for _, _, count in table) == total_recv


def test_retx_blocks_shape():
    # synthetic rows covering 4000 chunks: 40 blocks per node per layer
    rows = [(1, "n7", "DataRecv", 3999, ""), (2, "n7", "NetRetx", 150, "chunk"),
            (3, "n7", "NetRetx", 151, "chunk"), (4, "n7", "AppRetx", 0, "chunk")]
    table = retx_blocks(rows, block_size=100)
    n7_net = [r for r in table if r[0] == "n7" and r[1] == "net"]
    n7_app = [r for r in table if r[0] == "n7" and r[1] == "app"]
    assert len(n7_net) == 40 and len(n7_app) == 40
    assert [r for r in n7_net if r[2] == 100][0][3] == 2
    assert [r for r in n7_app if r[2] == 0][0][3] == 1


def test_parse_csv_rejects_bad_header():
    with pytest.raises(MalformedCsv):
        _parse_csv(["wrong,header", "1,n1,DataRecv,0,"])


def test_parse_csv_rejects_short_rows():
    with pytest.raises(MalformedCsv):
        _parse_csv(["sim_time_us,node,event,chunk_id,detail", "1,n1,DataRecv"])


# -- CLI -------------------------------------------------------------------------------------

def run_cli(*args, **kw):
    cmd = [sys.executable, "-c",
           "import sys; from fwdist.cli import fwsim_main; sys.exit(fwsim_main())"] + list(args)
    return subprocess.run(cmd, capture_output=True, text=True, **kw)


def test_cli_overhead_reproduces_paper_cases():
    t0 = time.time()
    proc = run_cli("overhead", "--firmware-size", "36864")
    assert proc.returncode == 0
    report = json.loads(proc.stdout)
    assert report["payload_capacity"] == 9
    assert report["signature_overhead_bytes"] == 262144
    proc = run_cli("overhead", "--firmware-size", "147456")
    assert json.loads(proc.stdout)["signature_overhead_bytes"] == 1048576
    proc = run_cli("overhead", "--firmware-size", "36864", "--compressed")
    assert json.loads(proc.stdout)["payload_capacity"] == 35
    assert time.time() - t0 < 10  # subprocess startup dominates; calculator itself is instant


def test_cli_overhead_validation_exit_code():
    proc = run_cli("overhead", "--firmware-size", "1024", "--mtu", "100")
    assert proc.returncode == 2


def test_cli_run_and_tables(tmp_path):
    scenario = tmp_path / "s.json"
    scenario.write_text(json.dumps(chain_raw()))
    out = tmp_path / "out"
    proc = run_cli("run", str(scenario), "--out", str(out))
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["completions"] == 3
    proc = run_cli("tables", str(out / "metrics.csv"), "--kind", "progress")
    assert proc.returncode == 0
    assert proc.stdout.splitlines()[0] == "node,sim_time_us,cumulative_chunks"
    proc = run_cli("tables", str(out / "metrics.csv"), "--kind", "retx")
    assert proc.returncode == 0


def test_cli_run_invalid_scenario_exit_2(tmp_path):
    scenario = tmp_path / "bad.json"
    scenario.write_text(json.dumps(chain_raw(strategy="nope")))
    proc = run_cli("run", str(scenario))
    assert proc.returncode == 2
    assert "strategy" in proc.stderr


def test_cli_sweep(tmp_path):
    scenario = tmp_path / "s.json"
    scenario.write_text(json.dumps(chain_raw()))
    proc = run_cli("sweep", str(scenario), "--axis", "chunk_count",
                   "--values", "10,20", "--seeds", "1,2")
    assert proc.returncode == 0
    lines = proc.stdout.splitlines()
    assert lines[0].startswith("axis_value,seed,")
    assert len([l for l in lines if l and not l.startswith("axis_value")]) == 6  # 4 rows + 2 medians
