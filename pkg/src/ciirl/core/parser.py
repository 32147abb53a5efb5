import json
import re

from ..exceptions import DatasetFormatError, InvalidInputError
from .trajectories import SettingDataset, Trajectory, validate_trajectory

DATASET_VERSION = 1
HEADER_RE = re.compile(
    r'#ciirl-dataset\s+version=(\d+)\s+width=(\d+)\s+height=(\d+)\s+'
    r'n_states=(\d+)\s+n_actions=(\d+)\s+setting=(\d+)\s*$')
PROVENANCE_RE = re.compile(r'#provenance\s+(.+)$')
RECORD_RE = re.compile(r'(\d+)((?:;\d+,\d+)+)$')
STEP_RE = re.compile(r';(\d+),(\d+)')


def format_dataset(ds, n_states, n_actions, width=0, height=0):
    """
    Serializes one setting: a header line, an optional provenance line and
    one ``setting_id;s,a;s,a;...`` record per trajectory.
    """
    lines = [f"#ciirl-dataset version={DATASET_VERSION} width={width} height={height} "
             f"n_states={n_states} n_actions={n_actions} setting={ds.setting_id}"]
    if ds.provenance:
        lines.append("#provenance " + json.dumps(ds.provenance, sort_keys=True))
    for traj in ds.trajectories:
        steps = "".join(f";{s},{a}" for s, a in zip(traj.states, traj.actions))
        lines.append(f"{traj.setting_id}{steps}")
    return "\n".join(lines) + "\n"


class DatasetParser:
    """
    Parses dataset files line by line into a structured representation,
    then validates it into a ``SettingDataset``.
    """

    def parse(self, text):
        header, provenance, records = None, {}, []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith('#ciirl-dataset'):
                if header is not None:
                    raise DatasetFormatError(f"Line {lineno}: duplicate header.")
                header = self._parse_header(line, lineno)
            elif line.startswith('#provenance'):
                provenance = self._parse_provenance(line, lineno)
            elif line.startswith('#'):
                continue
            else:
                if header is None:
                    raise DatasetFormatError(f"Line {lineno}: record before the dataset header.")
                records.append(self._parse_record(line, lineno))
        if header is None:
            raise DatasetFormatError("Missing '#ciirl-dataset' header.")
        return {'type': 'DATASET', 'header': header, 'provenance': provenance, 'records': records}

    def _parse_header(self, line, lineno):
        match = HEADER_RE.match(line)
        if not match:
            raise DatasetFormatError(f"Line {lineno}: invalid dataset header: '{line}'")
        version, width, height, n_states, n_actions, setting = (int(g) for g in match.groups())
        if version != DATASET_VERSION:
            raise DatasetFormatError(f"Line {lineno}: unsupported dataset version {version}.")
        return {'version': version, 'width': width, 'height': height,
                'n_states': n_states, 'n_actions': n_actions, 'setting': setting}

    def _parse_provenance(self, line, lineno):
        match = PROVENANCE_RE.match(line)
        try:
            data = json.loads(match.group(1)) if match else None
        except json.JSONDecodeError as e:
            raise DatasetFormatError(f"Line {lineno}: provenance is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise DatasetFormatError(f"Line {lineno}: provenance must be a JSON object.")
        return data

    def _parse_record(self, line, lineno):
        match = RECORD_RE.match(line)
        if not match:
            raise DatasetFormatError(f"Line {lineno}: invalid trajectory record.")
        steps = [(int(s), int(a)) for s, a in STEP_RE.findall(match.group(2))]
        return {'setting_id': int(match.group(1)), 'states': [s for s, _ in steps],
                'actions': [a for _, a in steps], 'line': lineno}

    def to_dataset(self, parsed, mdp=None):
        """Validates a parsed file and builds the dataset; with ``mdp``, every step must be possible."""
        header = parsed['header']
        if mdp is not None and (header['n_states'], header['n_actions']) != (mdp.n_states, mdp.n_actions):
            raise DatasetFormatError(
                f"Dataset is for {header['n_states']} states x {header['n_actions']} actions, "
                f"MDP has {mdp.n_states} x {mdp.n_actions}.")
        trajectories = []
        for record in parsed['records']:
            if record['setting_id'] != header['setting']:
                raise DatasetFormatError(
                    f"Line {record['line']}: setting {record['setting_id']} in a file for setting {header['setting']}.")
            if max(record['states']) >= header['n_states'] or max(record['actions']) >= header['n_actions']:
                raise DatasetFormatError(f"Line {record['line']}: index out of range.")
            traj = Trajectory(record['states'], record['actions'], record['setting_id'])
            if mdp is not None:
                try:
                    validate_trajectory(traj, mdp)
                except InvalidInputError as e:
                    raise DatasetFormatError(f"Line {record['line']}: {e}") from e
            trajectories.append(traj)
        try:
            return SettingDataset(header['setting'], tuple(trajectories), parsed['provenance'])
        except InvalidInputError as e:
            raise DatasetFormatError(str(e)) from e

    def load(self, text, mdp=None):
        return self.to_dataset(self.parse(text), mdp)
