import os

from ecvlroute.features import load_embeddings

from encoder_extract.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main


class TestExtractCommand:
    def test_extract_text(self, rsd_with_images, text_encoder_dir, tmp_path,
                          capsys):
        out = str(tmp_path / "text.emb")
        code = main(["extract", "--rsd", rsd_with_images, "--modality", "text",
                     "--encoder", text_encoder_dir, "-o", out])
        assert code == EXIT_OK
        assert "written 20 skipped 0 dim 32" in capsys.readouterr().out
        assert load_embeddings(out, "text").dim == 32

    def test_missing_rsd_is_2(self, text_encoder_dir, tmp_path):
        code = main(["extract", "--rsd", str(tmp_path / "nope.jsonl"),
                     "--modality", "text", "--encoder", text_encoder_dir,
                     "-o", str(tmp_path / "o.emb")])
        assert code == EXIT_DATA

    def test_bad_flags_are_1(self):
        assert main(["extract", "--rsd", "x"]) == EXIT_USAGE
        assert main(["frobnicate"]) == EXIT_USAGE


class TestMakeTinyCommand:
    def test_writes_usable_checkpoint(self, tmp_path, capsys):
        out = str(tmp_path / "enc")
        assert main(["make-tiny", "--modality", "text", "-o", out,
                     "--dim", "16"]) == EXIT_OK
        assert capsys.readouterr().out.strip() == out
        assert os.path.exists(os.path.join(out, "vocab.txt"))
        from encoder_extract.encoders import TextEncoder
        enc = TextEncoder(out)
        assert enc.dim == 16
        assert enc.encode(["hello"]).shape == (1, 16)
