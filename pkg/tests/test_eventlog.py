import json
import logging

import pytest

from eventlog.setup import ExperimentLogger, JSONLFileHandler, configure_logging


@pytest.fixture
def restore_root():
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield root
    for handler in list(root.handlers):
        if handler not in handlers:
            root.removeHandler(handler)
            handler.close()
    root.setLevel(level)


def read_events(log_dir):
    return [json.loads(line) for line in (log_dir / 'events.jsonl').read_text().splitlines()]


class TestEventLog:
    def test_structured_fields(self, tmp_path, restore_root):
        configure_logging('INFO', str(tmp_path))
        ExperimentLogger('vinet.test').info('held-out evaluation', tags=['EVAL'], stage='train', iteration=3,
                                           payload={'median_deg': 12.5})
        (event,) = [e for e in read_events(tmp_path) if e['logger'] == 'vinet.test']
        assert event['level'] == 'INFO'
        assert event['message'] == 'held-out evaluation'
        assert event['tags'] == ['EVAL'] and event['stage'] == 'train' and event['iteration'] == 3
        assert event['payload'] == {'median_deg': 12.5}

    def test_reconfigure_replaces_handlers(self, tmp_path, restore_root):
        configure_logging('INFO', str(tmp_path))
        configure_logging('WARNING', str(tmp_path))
        ours = [h for h in restore_root.handlers if getattr(h, '_vinet', False)]
        assert len(ours) == 2
        assert restore_root.level == logging.WARNING

    def test_level_filters_events(self, tmp_path, restore_root):
        configure_logging('WARNING', str(tmp_path))
        events = ExperimentLogger('vinet.test')
        events.info('dropped')
        events.warning('kept', tags=['DATA'])
        messages = [e['message'] for e in read_events(tmp_path)]
        assert messages == ['kept']

    def test_rotation(self, tmp_path):
        handler = JSONLFileHandler(str(tmp_path), max_bytes=200, backup_count=2)
        logger = logging.getLogger('vinet.rotation-test')
        logger.addHandler(handler)
        logger.propagate = False
        logger.setLevel(logging.INFO)
        try:
            for i in range(10):
                logger.info(f"event {i} " + 'x' * 50)
        finally:
            logger.removeHandler(handler)
            logger.propagate = True
        assert (tmp_path / 'events.jsonl.1').exists()
        assert not (tmp_path / 'events.jsonl.3').exists()
