import json
import math
import socket
import socketserver
import sys
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from turnwise.corpus import QAInstance
from turnwise.embeddings import synthetic_provider
from turnwise.fusion import AdapterParams, FusionConfig
from turnwise.sampling import SamplerConfig, build_plan
from turnwise.scoring import (
    BuiltinScorer,
    EmptyList,
    ExternalScorer,
    InvalidChunking,
    PromptChunk,
    ProtocolError,
    ScorerTimeout,
    ToyScorerParams,
    TransportError,
    WrongArity,
    assemble_inputs,
    chunk_transcript,
    collate_chunks,
    evaluate,
    external_score,
    init_scorer,
    mlm_binary_loss,
    plan_transcript,
    select_answer,
    toy_score,
)
from turnwise.embeddings import store_from_plan

from test_sampling import make_turnset


class TestChunkTranscript:
    def test_stride_rule(self):
        tokens = [f"t{i}" for i in range(10)]
        windows = chunk_transcript(tokens, chunk_size=6, overlap=2)
        assert windows == [tokens[0:6], tokens[4:10]]

    def test_single_window_when_short(self):
        tokens = list("abcde")
        assert chunk_transcript(tokens, 8, 0) == [tokens]

    def test_zero_tokens_one_empty_window(self):
        assert chunk_transcript([], 8, 2) == [[]]

    def test_invalid_chunking(self):
        with pytest.raises(InvalidChunking):
            chunk_transcript(["a"], 4, 4)
        with pytest.raises(InvalidChunking):
            chunk_transcript(["a"], 4, -1)

    @settings(max_examples=150, deadline=None)
    @given(st.integers(0, 200), st.integers(2, 40), st.integers(0, 30))
    def test_coverage_and_overlap(self, n, chunk_size, overlap):
        if overlap >= chunk_size:
            overlap = chunk_size - 1
        tokens = list(range(n))
        windows = chunk_transcript(tokens, chunk_size, overlap)
        covered = sorted({tok for win in windows for tok in win})
        assert covered == tokens
        assert all(len(win) <= chunk_size for win in windows)
        for a, b in zip(windows, windows[1:]):
            shared = set(a) & set(b)
            assert len(shared) == overlap


class TestMlmBinaryLoss:
    def test_perfect_prediction_near_zero(self):
        assert mlm_binary_loss(1 - 1e-7, 1) == pytest.approx(0.0, abs=1e-6)

    def test_uniform_is_ln2(self):
        assert mlm_binary_loss(0.5, 0) == pytest.approx(math.log(2), abs=1e-9)
        assert mlm_binary_loss(0.5, 1) == pytest.approx(math.log(2), abs=1e-9)

    def test_confident_wrong(self):
        assert mlm_binary_loss(0.9, 0) == pytest.approx(-math.log(0.1), abs=1e-9)

    def test_clamping_keeps_loss_finite(self):
        assert math.isfinite(mlm_binary_loss(0.0, 1))
        assert math.isfinite(mlm_binary_loss(1.0, 0))

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.0, 1.0, allow_nan=False), st.sampled_from([0, 1]))
    def test_non_negative(self, p, label):
        assert mlm_binary_loss(p, label) >= 0.0

    def test_bad_label(self):
        with pytest.raises(ValueError):
            mlm_binary_loss(0.5, 2)


class TestToyScore:
    def test_zero_weights_give_half(self):
        provider = synthetic_provider(seed=0, dim=8)
        chunk = PromptChunk("q?", "ans", "window", (np.ones(8),))
        assert toy_score(init_scorer(8), chunk, provider) == pytest.approx(0.5)

    def test_bias_saturation(self):
        provider = synthetic_provider(seed=0, dim=8)
        params = ToyScorerParams(np.zeros(32), 10.0)
        chunk = PromptChunk("q?", "ans", "w", ())
        assert toy_score(params, chunk, provider) > 0.99

    def test_empty_fused_uses_zero_mean(self):
        provider = synthetic_provider(seed=0, dim=4)
        w = np.zeros(16)
        w[8:12] = 100.0  # fused-mean block only
        params = ToyScorerParams(w, 0.0)
        chunk = PromptChunk("q", "a", "", ())
        assert toy_score(params, chunk, provider) == pytest.approx(0.5)

    def test_dim_mismatch(self):
        provider = synthetic_provider(seed=0, dim=8)
        with pytest.raises(Exception):
            toy_score(init_scorer(4), PromptChunk("q", "a", "", ()), provider)


class TestCollate:
    def test_mean(self):
        assert collate_chunks([0.2, 0.8]) == pytest.approx(0.5)

    def test_max(self):
        assert collate_chunks([0.2, 0.8], "max") == pytest.approx(0.8)

    def test_singleton(self):
        assert collate_chunks([0.7]) == pytest.approx(0.7)

    def test_empty(self):
        with pytest.raises(EmptyList):
            collate_chunks([])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(0.0, 1.0, allow_nan=False), min_size=1, max_size=10))
    def test_mean_in_range_and_permutation_invariant(self, values):
        out = collate_chunks(values)
        assert min(values) - 1e-12 <= out <= max(values) + 1e-12
        assert collate_chunks(list(reversed(values))) == pytest.approx(out)
        assert collate_chunks(list(reversed(values)), "max") == collate_chunks(values, "max")


class TestSelectAnswer:
    def test_argmax(self):
        assert select_answer([0.1, 0.9, 0.3, 0.3]) == 1

    def test_tie_break_lowest_index(self):
        assert select_answer([0.5, 0.5, 0.1, 0.1]) == 0

    def test_increasing(self):
        assert select_answer([0.1, 0.2, 0.3, 0.4]) == 3

    def test_wrong_arity(self):
        with pytest.raises(WrongArity):
            select_answer([0.5, 0.5])

    @settings(max_examples=100, deadline=None)
    @given(
        st.lists(
            st.floats(0.01, 0.99, allow_nan=False), min_size=4, max_size=4, unique=True
        )
    )
    def test_invariant_under_monotone_transform(self, scores):
        base = select_answer(scores)
        assert select_answer([s**3 for s in scores]) == base
        assert select_answer([math.tanh(4 * s) for s in scores]) == base
        assert select_answer([2.0 * s for s in scores]) == base


def build_eval_setup(n_videos=3, questions_per_video=2, m=4, d=8, seed=0):
    provider = synthetic_provider(seed=seed, dim=d)
    plans = {}
    stores = []
    instances = []
    for v in range(n_videos):
        vid = f"v{v}"
        ts = make_turnset([(0.0, 2.0), (5.0, 8.0)], video_id=vid, duration=10.0)
        plan = build_plan(ts, SamplerConfig(total_frames=m))
        plans[vid] = plan
        stores.append(store_from_plan(plan, provider))
        for q in range(questions_per_video):
            instances.append(
                QAInstance(
                    qa_id=f"{vid}q{q}",
                    video_id=vid,
                    question=f"question {v} {q}",
                    answers=(f"a{v}{q}0", f"a{v}{q}1", f"a{v}{q}2", f"a{v}{q}3"),
                    gold_index=(v + q) % 4,
                )
            )
    from turnwise.embeddings import merge_stores

    store = merge_stores(stores)
    inputs = assemble_inputs(plans, store)
    adapter = AdapterParams(np.eye(d), np.zeros(d))
    fusion_config = FusionConfig(alpha=0.5, d=d)
    return instances, inputs, adapter, fusion_config, provider


class FixedScorer:
    """p depends only on (qa-irrelevant) fixed mapping; used to force outcomes."""

    def __init__(self, fn):
        self.fn = fn

    def score(self, chunk):
        return self.fn(chunk)


class TestEvaluate:
    def test_constant_scorer_selects_index_zero(self):
        instances, inputs, adapter, fc, _ = build_eval_setup()
        report = evaluate(instances, inputs, FixedScorer(lambda c: 0.5), adapter, fc)
        golds = [inst.gold_index for inst in instances]
        assert report.n == len(instances)
        assert report.accuracy == pytest.approx(golds.count(0) / len(golds))

    def test_oracle_scorer_perfect(self):
        instances, inputs, adapter, fc, _ = build_eval_setup()
        by_id = {inst.qa_id: inst for inst in instances}

        def oracle(chunk):
            inst = next(i for i in by_id.values() if chunk.question == i.question)
            return 0.9 if chunk.answer == inst.answers[inst.gold_index] else 0.1

        report = evaluate(instances, inputs, FixedScorer(oracle), adapter, fc)
        assert report.accuracy == 1.0

    def test_anti_oracle_zero(self):
        instances, inputs, adapter, fc, _ = build_eval_setup()
        by_q = {inst.question: inst for inst in instances}

        def anti(chunk):
            inst = by_q[chunk.question]
            return 0.1 if chunk.answer == inst.answers[inst.gold_index] else 0.9

        report = evaluate(instances, inputs, FixedScorer(anti), adapter, fc)
        assert report.accuracy == 0.0

    def test_missing_plan_skipped_and_tallied(self):
        instances, inputs, adapter, fc, _ = build_eval_setup()
        ghost = QAInstance("ghost", "nosuch", "q", ("a", "b", "c", "d"), 0)
        report = evaluate(instances + [ghost], inputs, FixedScorer(lambda c: 0.5), adapter, fc)
        assert report.n == len(instances)
        assert any(s["reason"] == "missing_plan" for s in report.skipped)

    def test_missing_embedding_skipped(self):
        instances, inputs, adapter, fc, provider = build_eval_setup()
        victim_key = next(
            k for k, v in inputs.store.entries.items() if v.modality == "vision"
        )
        del inputs.store.entries[victim_key]
        report = evaluate(instances, inputs, FixedScorer(lambda c: 0.5), adapter, fc)
        assert any(
            s["reason"] == "missing_embedding" and s["detail"] == victim_key
            for s in report.skipped
        )
        # only the affected video's instances are skipped
        assert report.n == len(instances) - 2

    def test_workers_do_not_change_result(self):
        instances, inputs, adapter, fc, provider = build_eval_setup(n_videos=5)
        scorer = BuiltinScorer(init_scorer(fc.d), provider)
        serial = evaluate(instances, inputs, scorer, adapter, fc, workers=1)
        parallel = evaluate(instances, inputs, scorer, adapter, fc, workers=8)
        assert serial.to_json_dict() == parallel.to_json_dict()
        assert [r.p_yes for r in serial.records] == [r.p_yes for r in parallel.records]

    def test_deterministic_across_runs(self):
        instances, inputs, adapter, fc, provider = build_eval_setup()
        scorer = BuiltinScorer(init_scorer(fc.d), provider)
        a = evaluate(instances, inputs, scorer, adapter, fc)
        b = evaluate(instances, inputs, scorer, adapter, fc)
        assert a.to_json_dict() == b.to_json_dict()

    def test_per_video_breakdown_counts(self):
        instances, inputs, adapter, fc, _ = build_eval_setup(n_videos=2, questions_per_video=3)
        report = evaluate(instances, inputs, FixedScorer(lambda c: 0.5), adapter, fc)
        assert set(report.per_video) == {"v0", "v1"}
        assert all(stats["n"] == 3 for stats in report.per_video.values())


class TestPlanTranscript:
    def test_distinct_turns_joined_once(self):
        ts = make_turnset([(0.0, 2.0), (5.0, 8.0)], transcripts=["first words", "second words"])
        plan = build_plan(ts, SamplerConfig(total_frames=6))
        assert plan_transcript(plan) == "first words second words"

    def test_fallback_per_frame_text(self):
        from turnwise.corpus import Cue

        ts = make_turnset([], duration=10.0)
        plan = build_plan(
            ts, SamplerConfig(total_frames=2, fallback_window=1.0), [Cue(2.0, 3.0, "hello")]
        )
        assert plan_transcript(plan) == "hello"


ECHO_SCORER = r"""
import json, sys
for line in sys.stdin:
    req = json.loads(line)
    resp = {"id": req["id"], "p_yes": 0.7}
    sys.stdout.write(json.dumps(resp) + "\n")
    sys.stdout.flush()
"""

BAD_ID_SCORER = ECHO_SCORER.replace('req["id"]', '"wrong"')
BAD_RANGE_SCORER = ECHO_SCORER.replace("0.7", "1.5")


def make_chunk():
    return PromptChunk("why?", "because", "some context", (np.float64([1.0, 2.0]),))


class TestExternalScorer:
    def test_pipe_roundtrip(self):
        with ExternalScorer(f"cmd:{sys.executable} -c '{ECHO_SCORER}'") as scorer:
            assert scorer.score(make_chunk()) == pytest.approx(0.7)
            assert scorer.score(make_chunk()) == pytest.approx(0.7)

    def test_id_mismatch_is_protocol_error(self):
        with ExternalScorer(f"cmd:{sys.executable} -c '{BAD_ID_SCORER}'") as scorer:
            with pytest.raises(ProtocolError):
                scorer.score(make_chunk())

    def test_out_of_range_p_is_protocol_error(self):
        with ExternalScorer(f"cmd:{sys.executable} -c '{BAD_RANGE_SCORER}'") as scorer:
            with pytest.raises(ProtocolError):
                scorer.score(make_chunk())

    def test_timeout(self):
        silent = "import time\ntime.sleep(30)"
        with ExternalScorer(f"cmd:{sys.executable} -c '{silent}'", timeout=0.3) as scorer:
            with pytest.raises(ScorerTimeout):
                scorer.score(make_chunk())

    def test_dead_process_is_transport_error(self):
        scorer = ExternalScorer(f"cmd:{sys.executable} -c 'pass'")
        scorer._proc.wait(timeout=5)
        with pytest.raises(TransportError):
            scorer.score(make_chunk())

    def test_request_payload_shape(self):
        capture = (
            "import json, sys\n"
            "line = sys.stdin.readline()\n"
            "req = json.loads(line)\n"
            "keys = sorted(req.keys())\n"
            "ok = keys == ['answer', 'd', 'fused', 'id', 'question', 'transcript_window']\n"
            "ok = ok and req['d'] == 2 and len(req['fused']) == 1\n"
            "import base64, struct\n"
            "vals = struct.unpack('<2f', base64.b64decode(req['fused'][0]))\n"
            "ok = ok and vals == (1.0, 2.0)\n"
            "p = 0.9 if ok else 0.1\n"
            "sys.stdout.write(json.dumps({'id': req['id'], 'p_yes': p}) + chr(10))\n"
            "sys.stdout.flush()\n"
        )
        with ExternalScorer(f'cmd:{sys.executable} -c "{capture}"') as scorer:
            assert scorer.score(make_chunk()) == pytest.approx(0.9)

    def test_tcp_roundtrip(self):
        class Handler(socketserver.StreamRequestHandler):
            def handle(self):
                for raw in self.rfile:
                    req = json.loads(raw)
                    self.wfile.write(
                        (json.dumps({"id": req["id"], "p_yes": 0.42}) + "\n").encode()
                    )
                    self.wfile.flush()

        server = socketserver.ThreadingTCPServer(("127.0.0.1", 0), Handler)
        port = server.server_address[1]
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            assert external_score(f"tcp:127.0.0.1:{port}", make_chunk()) == pytest.approx(0.42)
        finally:
            server.shutdown()
            server.server_close()

    def test_connection_refused_is_transport_error(self):
        sock = socket.socket()
        sock.bind(("127.0.0.1", 0))
        port = sock.getsockname()[1]
        sock.close()
        with pytest.raises(TransportError):
            ExternalScorer(f"tcp:127.0.0.1:{port}")

    def test_bad_endpoint_string(self):
        with pytest.raises(ValueError):
            ExternalScorer("http://nope")
