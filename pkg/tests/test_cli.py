import json
import struct

import numpy as np
import pytest

from cli.__main__ import EXIT_INVALID, EXIT_MISSING_FILE, EXIT_OK, EXIT_USAGE, parse_rotation, run
from common.errors import InvalidArgumentError
from sphermap.fileio import read_spherical_map

PAD_DEMO_OUTPUT = """Source (2x2):
a b
c d
Padded (P=1):
a b a b
b a b a
d c d c
c d c d
"""


def matrix_after(lines, title):
    start = lines.index(title) + 1
    return np.array([[float(v) for v in line.strip(' []').split()] for line in lines[start:start + 3]])


class TestDiagnosticsCommands:
    def test_pad_demo(self, isolated_logs, capsys):
        assert run(['pad-demo']) == EXIT_OK
        assert capsys.readouterr().out == PAD_DEMO_OUTPUT

    def test_pad_demo_odd_width(self, isolated_logs):
        assert run(['pad-demo', '--height', '2', '--width', '3']) == EXIT_INVALID

    def test_pad_demo_large_grid_labels(self, isolated_logs, capsys):
        assert run(['pad-demo', '--height', '4', '--width', '8', '--pad', '2']) == EXIT_OK
        assert '3.7' in capsys.readouterr().out

    def test_decompose_identity(self, isolated_logs, capsys):
        assert run(['decompose', '--rotation', '1 0 0 0 1 0 0 0 1']) == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert lines[0].startswith('phi   = 0.000000 rad')
        np.testing.assert_allclose(matrix_after(lines, 'R_vp ='), np.eye(3), atol=1e-6)
        np.testing.assert_allclose(matrix_after(lines, 'R_ip ='), np.eye(3), atol=1e-6)

    def test_decompose_rejects_non_rotation(self, isolated_logs):
        assert run(['decompose', '--rotation', '1 0 0 0 1 0 0 0 2']) == EXIT_INVALID
        assert run(['decompose', '--rotation', '1 0 0']) == EXIT_INVALID

    def test_parse_rotation_accepts_commas(self):
        assert parse_rotation('1,0,0, 0,1,0, 0,0,1').flat() == (1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0)
        with pytest.raises(InvalidArgumentError):
            parse_rotation('1 0 0 0 1 0 0 0 x')

    def test_gradcheck_single_op(self, isolated_logs, capsys):
        assert run(['gradcheck', '--ops', 'linear']) == EXIT_OK
        out = capsys.readouterr().out
        assert 'linear' in out and '✓' in out


class TestUsage:
    def test_no_command(self, isolated_logs):
        assert run([]) == EXIT_USAGE

    def test_unknown_option(self, isolated_logs):
        with pytest.raises(SystemExit) as info:
            run(['pad-demo', '--bogus'])
        assert info.value.code == EXIT_USAGE

    def test_unknown_gradcheck_op(self, isolated_logs):
        with pytest.raises(SystemExit) as info:
            run(['gradcheck', '--ops', 'softmax'])
        assert info.value.code == EXIT_USAGE

    @pytest.mark.parametrize('command', ['gen-data', 'convert', 'train', 'eval', 'check-equivariance',
                                         'gradcheck', 'pad-demo', 'decompose'])
    def test_help_exits_zero(self, isolated_logs, capsys, command):
        with pytest.raises(SystemExit) as info:
            run([command, '--help'])
        assert info.value.code == 0
        assert '--seed' in capsys.readouterr().out

    def test_missing_config(self, isolated_logs):
        assert run(['pad-demo', '--config', 'absent.yaml']) == EXIT_MISSING_FILE

    def test_invalid_config(self, isolated_logs):
        (isolated_logs / 'bad.yaml').write_text('network:\n  input_width: 62\n')
        assert run(['pad-demo', '--config', 'bad.yaml']) == EXIT_INVALID


class TestPipeline:
    def test_missing_input_file(self, isolated_logs):
        assert run(['convert', '--in', 'absent.vipc', '--out', 'map.vism']) == EXIT_MISSING_FILE

    def test_generate_convert_train_eval(self, isolated_logs, tiny_config_file, capsys):
        config = ['--config', str(tiny_config_file)]
        assert run(['gen-data', '--count', '4', '--out', 'data', '--seed', '3'] + config) == EXIT_OK
        assert '✓ Wrote 4 samples (seed 3)' in capsys.readouterr().out

        assert run(['convert', '--in', 'data/sample_00000.vipc', '--out', 'maps/s0.vism',
                    '--height', '8', '--width', '8']) == EXIT_OK
        assert read_spherical_map(isolated_logs / 'maps' / 's0.vism').data.shape == (1, 8, 8)
        assert run(['convert', '--in', 'data/sample_00000.vipc', '--out', 'maps/s1.vism',
                    '--height', '8', '--width', '7']) == EXIT_INVALID

        assert run(['train', '--data', 'data', '--out-checkpoint', 'run/model.vick', '--log', 'run/log.csv']
                   + config) == EXIT_OK
        out = capsys.readouterr().out
        assert '✓ Trained 2 iterations' in out
        assert (isolated_logs / 'run' / 'model.vick').exists()
        assert (isolated_logs / 'run' / 'log.csv').read_text().startswith('iter,loss,loss_vp,loss_ip,lr,median_deg')

        assert run(['eval', '--checkpoint', 'run/model.vick', '--data', 'data', '--report', 'run/report.json']
                   + config) == EXIT_OK
        report = json.loads((isolated_logs / 'run' / 'report.json').read_text())
        assert report['count'] == 4
        assert 'median_deg' in capsys.readouterr().out

    def test_eval_with_other_architecture(self, isolated_logs, tiny_config_file):
        config = ['--config', str(tiny_config_file)]
        assert run(['gen-data', '--count', '3', '--out', 'data'] + config) == EXIT_OK
        assert run(['train', '--data', 'data', '--out-checkpoint', 'model.vick'] + config) == EXIT_OK
        wider = isolated_logs / 'wider.yaml'
        wider.write_text(tiny_config_file.read_text().replace('channels: 2', 'channels: 4'))
        assert run(['eval', '--checkpoint', 'model.vick', '--data', 'data', '--config', str(wider)]) == EXIT_INVALID

    def test_gen_data_count_defaults_to_train_count(self, isolated_logs, tiny_config_file, capsys):
        assert run(['gen-data', '--out', 'data', '--config', str(tiny_config_file)]) == EXIT_OK
        assert '✓ Wrote 6 samples' in capsys.readouterr().out
        assert len(list((isolated_logs / 'data').glob('sample_*.vipc'))) == 6

    def test_eval_missing_checkpoint(self, isolated_logs, tiny_config_file):
        config = ['--config', str(tiny_config_file)]
        assert run(['gen-data', '--count', '1', '--out', 'data'] + config) == EXIT_OK
        assert run(['eval', '--checkpoint', 'absent.vick', '--data', 'data'] + config) == EXIT_MISSING_FILE

    @pytest.mark.parametrize('payload', [
        b'VIPC' + struct.pack('<III', 1, 1, 1) + struct.pack('<B', 2) + b'\xff\xfe' + struct.pack('<I', 1) + bytes(16),
        b'VIPC' + struct.pack('<III', 1, 0xFFFFFFF0, 0) + bytes(12),
    ])
    def test_corrupt_cloud_is_invalid(self, isolated_logs, payload):
        (isolated_logs / 'bad.vipc').write_bytes(payload)
        assert run(['convert', '--in', 'bad.vipc', '--out', 'map.vism']) == EXIT_INVALID

    def test_corrupt_checkpoint_is_invalid(self, isolated_logs, tiny_config_file):
        config = ['--config', str(tiny_config_file)]
        assert run(['gen-data', '--count', '1', '--out', 'data'] + config) == EXIT_OK
        (isolated_logs / 'bad.vick').write_bytes(b'VICK' + struct.pack('<II', 1, 0x7FFFFFFF))
        assert run(['eval', '--checkpoint', 'bad.vick', '--data', 'data'] + config) == EXIT_INVALID
