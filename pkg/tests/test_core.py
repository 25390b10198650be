"""Registry and logging helpers."""

import logging

import pytest

from enclab.core.logger import ConfigHashFilter, get_logger, log_banner, setup_logger
from enclab.core.registry import Registry


class TestRegistry:

    def test_register_and_describe(self):
        registry = Registry("demo")

        @registry.register("square")
        def square(x):
            """Square a number.

            Longer explanation.
            """
            return x * x

        assert registry.create("square", 3) == 9
        assert "square" in registry
        assert len(registry) == 1
        assert registry.describe() == {"square": "Square a number."}

    def test_explicit_description(self):
        registry = Registry("demo")
        registry.register("noop", description="does nothing")(lambda: None)
        assert registry.describe()["noop"] == "does nothing"

    def test_duplicate_name(self):
        registry = Registry("demo")
        registry.register("a")(lambda: 1)
        with pytest.raises(ValueError):
            registry.register("a")(lambda: 2)

    def test_unknown_entry(self):
        with pytest.raises(KeyError):
            Registry("demo").create("missing")


class TestLogging:

    def test_hash_reaches_child_records(self, tmp_path):
        log_file = tmp_path / "logs" / "run.log"
        setup_logger(level="DEBUG", log_format="%(config_hash)s %(message)s",
                     log_file=str(log_file), rotation=False, config_hash="0123456789abcdef")
        get_logger("solver").info("stepping")
        for handler in logging.getLogger("enclab").handlers:
            handler.flush()
        assert "0123456789abcdef stepping" in log_file.read_text()
        setup_logger()

    def test_filter_keeps_existing_hash(self):
        record = logging.LogRecord("enclab", logging.INFO, __file__, 1, "msg", None, None)
        record.config_hash = "fedcba9876543210"
        assert ConfigHashFilter("0123456789abcdef").filter(record)
        assert record.config_hash == "fedcba9876543210"

    def test_banner(self, caplog):
        logger = logging.getLogger("banner-test")
        with caplog.at_level(logging.INFO, logger="banner-test"):
            log_banner(logger, ["one", "two"], title="SUMMARY")
        messages = [r.getMessage() for r in caplog.records]
        assert messages == ["=" * 60, "SUMMARY", "=" * 60, "one", "two", "=" * 60]
