import json

import numpy as np
import pytest

from conftest import RECT, rect_mask, scene_array, strength_model
from salprop.app import build_parser, list_images, main, run_parallel
from salprop.boxes import Window, iou
from salprop.common import EXIT_DATA, EXIT_IO, EXIT_OK, EXIT_USAGE
from salprop.crf import load_model, save_model
from salprop.evalkit import read_report_csv
from salprop.proposals import read_proposals_csv

# Object rectangles of the toy training corpus, clear of the clutter bars.
TRAIN_RECTS = [(24, 30, 48, 36), (12, 18, 40, 30), (36, 40, 40, 40), (20, 50, 56, 30), (30, 20, 36, 56)]


@pytest.fixture(autouse=True)
def _no_seed_override(monkeypatch):
    monkeypatch.delenv("SALPROP_SEED", raising=False)


@pytest.fixture
def model_file(tmp_path):
    return save_model(strength_model(), tmp_path / "strength.model")


@pytest.fixture
def scene_file(write_png):
    return write_png(scene_array(), "imgs/scene.png")


def _fast(*args):
    """Coarser window scales keep the end-to-end runs short."""
    return [*args, "--scale-step", "0.05", "--top-k", "200"]


class TestUsage:
    def test_no_command(self, capsys):
        assert main([]) == EXIT_USAGE
        assert "error:" in capsys.readouterr().err

    def test_unknown_flag(self, model_file, scene_file):
        assert main(["detect", str(scene_file), "--model", str(model_file), "--out", "x.csv", "--bogus"]) == EXIT_USAGE

    @pytest.mark.parametrize("flag, value", [("--alpha", "2.0"), ("--alpha", "abc"), ("--max-n", "0")])
    def test_bad_values(self, tmp_path, model_file, scene_file, flag, value):
        argv = ["detect", str(scene_file), "--model", str(model_file), "--out", str(tmp_path / "o.csv"), flag, value]
        assert main(argv) == EXIT_USAGE

    def test_help_lists_defaults(self, capsys):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["detect", "--help"])
        out = capsys.readouterr().out
        assert "--alpha" in out and "(default: 0.65)" in out
        assert "--nms-theta" in out and "(default: 0.75)" in out


class TestDetect:
    def test_single_image(self, tmp_path, model_file, scene_file, capsys):
        out = tmp_path / "scene.csv"
        assert main(["detect", str(scene_file), "--model", str(model_file), "--out", str(out), "--max-n", "10"]) == EXIT_OK
        lines = out.read_text().splitlines()
        assert lines[0].startswith("# salprop detect alpha=0.65")
        assert "max_n=10" in lines[0]
        assert lines[1] == "rank,x,y,w,h,score"
        pset = read_proposals_csv(out)
        assert 1 <= len(pset) <= 10
        assert iou(pset.proposals[0].window, Window(*RECT)) >= 0.5
        assert "scene: " in capsys.readouterr().out

    def test_missing_model(self, tmp_path, scene_file):
        argv = ["detect", str(scene_file), "--model", str(tmp_path / "none.model"), "--out", str(tmp_path / "o.csv")]
        assert main(argv) == EXIT_IO

    def test_missing_image(self, tmp_path, model_file):
        argv = ["detect", str(tmp_path / "none.png"), "--model", str(model_file), "--out", str(tmp_path / "o.csv")]
        assert main(argv) == EXIT_IO

    def test_directory_of_images(self, tmp_path, write_png, model_file):
        write_png(scene_array(), "batch/one.png")
        write_png(scene_array(rect=(12, 18, 40, 30)), "batch/two.png")
        (tmp_path / "batch" / "notes.txt").write_text("not an image")
        out = tmp_path / "props"
        argv = _fast(
            "detect", str(tmp_path / "batch"), "--model", str(model_file), "--out", str(out),
            "--saliency-csv", str(tmp_path / "sal"), "--jobs", "2",
        )
        assert main(argv) == EXIT_OK
        assert sorted(p.name for p in out.iterdir()) == ["one.csv", "two.csv"]
        assert sorted(p.name for p in (tmp_path / "sal").iterdir()) == ["one_saliency.csv", "two_saliency.csv"]
        header = (tmp_path / "sal" / "one_saliency.csv").read_text().splitlines()[1]
        assert header == "edgelet_id,prior,posterior,strength"

    def test_blank_image_gives_header_only(self, tmp_path, write_png, model_file):
        image = write_png(np.zeros((48, 48, 3)), "blank.png")
        out = tmp_path / "blank.csv"
        assert main(_fast("detect", str(image), "--model", str(model_file), "--out", str(out))) == EXIT_OK
        assert len(read_proposals_csv(out)) == 0

    def test_seed_from_environment(self, tmp_path, monkeypatch, model_file, scene_file):
        monkeypatch.setenv("SALPROP_SEED", "7")
        out = tmp_path / "o.csv"
        assert main(_fast("detect", str(scene_file), "--model", str(model_file), "--out", str(out), "--seed", "3")) == 0
        assert " seed=7 " in out.read_text().splitlines()[0]

    def test_config_file(self, tmp_path, model_file, scene_file):
        saved = tmp_path / "run.json"
        out = tmp_path / "o.csv"
        argv = _fast("detect", str(scene_file), "--model", str(model_file), "--out", str(out), "--max-n", "5")
        assert main([*argv, "--save-config", str(saved)]) == EXIT_OK
        assert json.loads(saved.read_text())["params"]["max_n"] == 5

        out2 = tmp_path / "o2.csv"
        argv2 = ["detect", str(scene_file), "--model", str(model_file), "--out", str(out2), "--config", str(saved)]
        assert main([*argv2, "--max-n", "3"]) == EXIT_OK
        assert "max_n=3" in out2.read_text().splitlines()[0]
        assert "scale_step=0.05" in out2.read_text().splitlines()[0]

    def test_deterministic(self, tmp_path, model_file, scene_file):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(_fast("detect", str(scene_file), "--model", str(model_file), "--out", str(a))) == 0
        assert main(_fast("detect", str(scene_file), "--model", str(model_file), "--out", str(b))) == 0
        lines_a, lines_b = a.read_text().splitlines(), b.read_text().splitlines()
        assert lines_a[1:] == lines_b[1:]
        assert lines_a[0].split(" elapsed_s=")[0] == lines_b[0].split(" elapsed_s=")[0]

    def test_timing_recorded(self, tmp_path, model_file, scene_file):
        out = tmp_path / "o.csv"
        assert main(_fast("detect", str(scene_file), "--model", str(model_file), "--out", str(out))) == 0
        assert " elapsed_s=" in out.read_text().splitlines()[0]
        pset = read_proposals_csv(out)
        assert pset.elapsed > 0
        assert pset.seed == 42


class TestTrain:
    def _corpus(self, tmp_path, write_png, rects=TRAIN_RECTS, mask_size=96):
        for n, rect in enumerate(rects):
            write_png(scene_array(rect=rect), f"train/img/s{n}.png")
            write_png(rect_mask(size=mask_size, rect=rect), f"train/mask/s{n}.png")
        return tmp_path / "train" / "img", tmp_path / "train" / "mask"

    def test_toy_corpus(self, tmp_path, write_png, capsys):
        images, masks = self._corpus(tmp_path, write_png)
        model_out = tmp_path / "toy.model"
        argv = ["train", "--images", str(images), "--masks", str(masks), "--model-out", str(model_out)]
        assert main([*argv, "--max-passes", "30"]) == EXIT_OK
        model = load_model(model_out)
        assert np.all(np.isfinite(model.W1)) and np.all(np.isfinite(model.W2))
        out = capsys.readouterr().out
        assert "Trained on 5 images" in out
        assert "final duality gap:" in out
        accuracy = float(out.split("training accuracy:")[1].split()[0])
        assert accuracy >= 0.9

    def test_trained_model_runs_detect(self, tmp_path, write_png, scene_file):
        images, masks = self._corpus(tmp_path, write_png, rects=TRAIN_RECTS[:2])
        model_out = tmp_path / "toy.model"
        argv = ["train", "--images", str(images), "--masks", str(masks), "--model-out", str(model_out), "--max-passes", "5"]
        assert main(argv) == EXIT_OK
        out = tmp_path / "o.csv"
        assert main(_fast("detect", str(scene_file), "--model", str(model_out), "--out", str(out))) == EXIT_OK
        assert out.read_text().splitlines()[1] == "rank,x,y,w,h,score"

    def test_empty_directories(self, tmp_path):
        (tmp_path / "img").mkdir()
        (tmp_path / "mask").mkdir()
        argv = ["train", "--images", str(tmp_path / "img"), "--masks", str(tmp_path / "mask"), "--model-out", "m"]
        assert main(argv) == EXIT_DATA

    def test_mask_size_mismatch(self, tmp_path, write_png):
        images, masks = self._corpus(tmp_path, write_png, rects=TRAIN_RECTS[:1], mask_size=64)
        argv = ["train", "--images", str(images), "--masks", str(masks), "--model-out", str(tmp_path / "m")]
        assert main(argv) == EXIT_DATA

    def test_missing_directory(self, tmp_path):
        argv = ["train", "--images", str(tmp_path / "x"), "--masks", str(tmp_path / "y"), "--model-out", "m"]
        assert main(argv) == EXIT_IO


def _proposal_dir(tmp_path):
    props = tmp_path / "props"
    props.mkdir()
    (props / "a.csv").write_text("# salprop detect\nrank,x,y,w,h,score\n1,80,80,5,5,0.9\n2,0,0,10,10,0.5\n")
    (props / "b.csv").write_text("rank,x,y,w,h,score\n1,20,20,10,10,0.7\n")
    return props


def _annotation_dir(tmp_path):
    ann = tmp_path / "ann"
    ann.mkdir()
    (ann / "gt.csv").write_text("image_id,x,y,w,h\na,0,0,10,10\nb,20,20,10,10\nb,60,60,10,10\n")
    return ann


class TestEval:
    def test_report(self, tmp_path, capsys):
        out = tmp_path / "report.csv"
        argv = ["eval", "--proposals", str(_proposal_dir(tmp_path)), "--annotations", str(_annotation_dir(tmp_path))]
        assert main([*argv, "--iou", "0.5,0.6,0.7", "--max-n", "3", "--out", str(out)]) == EXIT_OK
        report = read_report_csv(out)
        assert report.thresholds == [0.5, 0.6, 0.7]
        np.testing.assert_allclose(report.curves[0.5], [1 / 3, 2 / 3, 2 / 3])
        assert report.n_at_75[0.5] is None
        assert out.read_text().startswith("# salprop eval iou=0.5;0.6;0.7 max_n=3")
        assert capsys.readouterr().out.startswith("salprop || IoU 0.5: AUC")
        assert report.seconds_per_image is None

    def test_timing_column(self, tmp_path, capsys):
        props = _proposal_dir(tmp_path)
        (props / "a.csv").write_text("# salprop detect seed=42 elapsed_s=0.5\nrank,x,y,w,h,score\n1,0,0,10,10,0.9\n")
        (props / "b.csv").write_text("# salprop detect seed=42 elapsed_s=1.5\nrank,x,y,w,h,score\n1,20,20,10,10,0.7\n")
        out = tmp_path / "report.csv"
        argv = ["eval", "--proposals", str(props), "--annotations", str(_annotation_dir(tmp_path))]
        assert main([*argv, "--iou", "0.5", "--max-n", "2", "--out", str(out)]) == EXIT_OK
        assert capsys.readouterr().out.splitlines()[0].endswith(" || time 1.00 s")
        assert read_report_csv(out).seconds_per_image == pytest.approx(1.0)

    def test_empty_annotations(self, tmp_path):
        (tmp_path / "ann").mkdir()
        argv = ["eval", "--proposals", str(_proposal_dir(tmp_path)), "--annotations", str(tmp_path / "ann")]
        assert main([*argv, "--out", str(tmp_path / "r.csv")]) == EXIT_DATA

    def test_malformed_proposals(self, tmp_path):
        props = _proposal_dir(tmp_path)
        (props / "a.csv").write_text("x,y\n1,2\n")
        argv = ["eval", "--proposals", str(props), "--annotations", str(_annotation_dir(tmp_path))]
        assert main([*argv, "--out", str(tmp_path / "r.csv")]) == EXIT_DATA


class TestCurves:
    def test_plot_data(self, tmp_path):
        report = tmp_path / "report.csv"
        argv = ["eval", "--proposals", str(_proposal_dir(tmp_path)), "--annotations", str(_annotation_dir(tmp_path))]
        assert main([*argv, "--iou", "0.5,0.7", "--max-n", "3", "--out", str(report)]) == EXIT_OK
        out = tmp_path / "curves.csv"
        assert main(["curves", "--report", str(report), "--out", str(out)]) == EXIT_OK
        lines = out.read_text().splitlines()
        assert lines[1] == "series,iou,n,recall"
        assert {ln.split(",")[0] for ln in lines[2:]} == {"iou@0.5", "iou@0.7"}
        assert len(lines) == 2 + 2 * 3

    def test_malformed_report(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("iou,n,recall\n0.5,1,0.3\n")
        assert main(["curves", "--report", str(bad), "--out", str(tmp_path / "c.csv")]) == EXIT_DATA


class TestSweep:
    def test_sweep_file(self, tmp_path, write_png, model_file, capsys):
        write_png(scene_array(), "sweep/scene.png")
        ann = tmp_path / "ann"
        ann.mkdir()
        x, y, w, h = RECT
        (ann / "gt.csv").write_text(f"image_id,x,y,w,h\nscene,{x},{y},{w},{h}\n")
        out = tmp_path / "sweep.csv"
        argv = _fast(
            "sweep-nms", "--images", str(tmp_path / "sweep"), "--annotations", str(ann),
            "--model", str(model_file), "--thetas", "0.5,0.75", "--iou", "0.5", "--max-n", "20", "--out", str(out),
        )
        assert main(argv) == EXIT_OK
        lines = out.read_text().splitlines()
        assert lines[1] == "theta,iou,recall"
        assert [ln.split(",")[:2] for ln in lines[2:]] == [["0.5", "0.5"], ["0.75", "0.5"]]
        assert all(float(ln.split(",")[2]) == 1.0 for ln in lines[2:])
        assert "IoU 0.5: best NMS cut-off 0.5" in capsys.readouterr().out


# Twenty object rectangles for the end-to-end run, all clear of the clutter bars.
E2E_RECTS = [(8 + 3 * (k % 8), 14 + 2 * (k % 10), 28 + 2 * (k % 7), 26 + 3 * (k % 5)) for k in range(20)]


class TestEndToEnd:
    def test_train_detect_eval(self, tmp_path, write_png, capsys):
        for n, rect in enumerate(TRAIN_RECTS):
            write_png(scene_array(rect=rect), f"train/img/s{n}.png")
            write_png(rect_mask(rect=rect), f"train/mask/s{n}.png")
        model_out = tmp_path / "toy.model"
        argv = [
            "train", "--images", str(tmp_path / "train" / "img"), "--masks", str(tmp_path / "train" / "mask"),
            "--model-out", str(model_out), "--max-passes", "20",
        ]
        assert main(argv) == EXIT_OK

        rows = ["image_id,x,y,w,h"]
        for k, rect in enumerate(E2E_RECTS):
            write_png(scene_array(rect=rect), f"test/t{k:02d}.png")
            rows.append(f"t{k:02d},{rect[0]},{rect[1]},{rect[2]},{rect[3]}")
        ann = tmp_path / "ann"
        ann.mkdir()
        (ann / "gt.csv").write_text("\n".join(rows) + "\n")
        props = tmp_path / "props"
        argv = _fast(
            "detect", str(tmp_path / "test"), "--model", str(model_out), "--out", str(props),
            "--max-n", "1000", "--jobs", "2",
        )
        assert main(argv) == EXIT_OK
        assert len(list(props.iterdir())) == 20
        capsys.readouterr()

        report_path = tmp_path / "report.csv"
        argv = [
            "eval", "--proposals", str(props), "--annotations", str(ann),
            "--iou", "0.5,0.7", "--max-n", "1000", "--out", str(report_path),
        ]
        assert main(argv) == EXIT_OK
        report = read_report_csv(report_path)
        for thr in (0.5, 0.7):
            curve = report.curves[thr]
            assert len(curve) == 1000
            assert curve[9] <= curve[99] <= curve[999]
        assert report.curves[0.5][999] >= 0.5
        assert report.curves[0.7][999] <= report.curves[0.5][999]
        assert report.seconds_per_image > 0

        row = capsys.readouterr().out.splitlines()[0]
        assert row.startswith("salprop || IoU 0.5: AUC ")
        assert " || IoU 0.7: AUC " in row
        assert row.count("N@75% ") == 2
        assert " || time " in row and not row.endswith("time -")


class TestHelpers:
    def test_list_images(self, tmp_path, write_png):
        write_png(np.zeros((16, 16)), "d/b.png")
        write_png(np.zeros((16, 16)), "d/a.jpg")
        (tmp_path / "d" / "c.txt").write_text("")
        single = write_png(np.zeros((16, 16)), "z.png")
        names = [p.name for p in list_images([tmp_path / "d", single])]
        assert names == ["a.jpg", "b.png", "z.png"]

    def test_run_parallel_keeps_order(self):
        assert run_parallel(lambda v: v * v, list(range(20)), jobs=4) == [v * v for v in range(20)]
