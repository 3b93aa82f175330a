"""
Dataset directory layout and bit-exact file IO.

Layout of one sequence under a dataset root::

    <root>/<seq>/frames/%05d.png      RGB frames
    <root>/<seq>/masks/%05d.png       indexed masks (0 = background, k = instance k)
    <root>/<seq>/flow_fwd/%05d.flo    Middlebury flow, frame t -> t + 1
    <root>/<seq>/flow_bwd/%05d.flo    Middlebury flow on frame t + 1 -> t
    <root>/<seq>/tubes.json           frame index -> instance id -> [x0, y0, x1, y1]
    <root>/<seq>/meta.json            categories, instance count, frame count

A dataset root may also carry ``splits.json`` naming the train / val_seen /
val_unseen sequence ids.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from PIL import Image

from .exceptions import DataValidationError, FlowFormatError, SequenceIOError
from .models import BoxTube, FlowField, Frame, InstanceMaskSet, VideoSequence

logger = logging.getLogger(__name__)

FLO_MAGIC = b'PIEH'
FRAME_PATTERN = '{:05d}.png'
FLOW_PATTERN = '{:05d}.flo'
DEFAULT_NUM_CHANNELS = 6
SPLIT_NAMES = ('train', 'val_seen', 'val_unseen')

# DAVIS colour palette: index k gets a distinct colour, background stays black.
_PALETTE = []
for _index in range(256):
    _r = _g = _b = 0
    _code = _index
    for _bit in range(8):
        _r |= ((_code >> 0) & 1) << (7 - _bit)
        _g |= ((_code >> 1) & 1) << (7 - _bit)
        _b |= ((_code >> 2) & 1) << (7 - _bit)
        _code >>= 3
    _PALETTE.extend((_r, _g, _b))
MASK_PALETTE = tuple(_PALETTE)


def _require(path):
    path = Path(path)
    if not path.is_file():
        raise SequenceIOError(f'Missing file: {path}', path=path)
    return path


def _ensure_dir(path):
    try:
        Path(path).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise SequenceIOError(f'Cannot create directory {path}: {exc}', path=path) from exc


# Middlebury .flo

def write_flo(field, path):
    """Write a flow field as little-endian Middlebury ``.flo``."""
    path = Path(path)
    _ensure_dir(path.parent)
    header = FLO_MAGIC + np.array([field.width, field.height], dtype='<i4').tobytes()
    try:
        path.write_bytes(header + field.vectors.astype('<f4').tobytes())
    except OSError as exc:
        raise SequenceIOError(f'Cannot write flow file {path}: {exc}', path=path) from exc


def read_flo(path, direction='forward'):
    """Read a Middlebury ``.flo`` file into a FlowField."""
    data = _require(path).read_bytes()
    if len(data) < 12 or data[:4] != FLO_MAGIC:
        raise FlowFormatError(f'{path} does not start with the PIEH magic tag.', path=path)
    width, height = (int(v) for v in np.frombuffer(data, dtype='<i4', count=2, offset=4))
    if width < 0 or height < 0:
        raise FlowFormatError(f'{path} declares a negative size {width}x{height}.', path=path)
    expected = 12 + 8 * width * height
    if len(data) != expected:
        raise FlowFormatError(
            f'{path} holds {len(data)} bytes, expected {expected} for {width}x{height}.', path=path
        )
    vectors = np.frombuffer(data, dtype='<f4', count=2 * width * height, offset=12)
    return FlowField(vectors.reshape(height, width, 2).astype(np.float32), direction)


# Frames and masks

def write_frame(frame, path):
    path = Path(path)
    _ensure_dir(path.parent)
    pixels = np.round(frame.pixels * 255.0).astype(np.uint8)
    try:
        Image.fromarray(pixels, mode='RGB').save(path)
    except OSError as exc:
        raise SequenceIOError(f'Cannot write frame {path}: {exc}', path=path) from exc


def read_frame(path, timestamp_index=0):
    with Image.open(_require(path)) as image:
        pixels = np.asarray(image.convert('RGB'), dtype=np.float32) / 255.0
    return Frame(pixels, timestamp_index)


def read_index_image(path):
    with Image.open(_require(path)) as image:
        if image.mode not in ('P', 'L'):
            raise DataValidationError(f'{path} is a {image.mode} image, expected an indexed mask.')
        return np.array(image, dtype=np.uint8)


def write_index_image(index_map, path):
    path = Path(path)
    _ensure_dir(path.parent)
    image = Image.fromarray(index_map.astype(np.uint8))
    image.putpalette(MASK_PALETTE)
    try:
        image.save(path)
    except OSError as exc:
        raise SequenceIOError(f'Cannot write mask {path}: {exc}', path=path) from exc


def save_masks(masks, root_path):
    """
    Write binarized mask sets as indexed PNGs ``%05d.png`` under ``root_path``.

    Every set is checked before anything is written, so a bad frame never
    leaves a half-written directory behind.
    """
    index_maps = []
    for frame_index, mask_set in enumerate(masks):
        try:
            index_maps.append(mask_set.to_index_map())
        except DataValidationError as exc:
            raise DataValidationError(f'Frame {frame_index}: {exc}') from exc
    root_path = Path(root_path)
    _ensure_dir(root_path)
    for frame_index, index_map in enumerate(index_maps):
        write_index_image(index_map, root_path / FRAME_PATTERN.format(frame_index))
    logger.debug('Wrote %d mask frames to %s', len(index_maps), root_path)


def load_masks(root_path, num_frames, num_channels, active_count=None, instance_ids=None):
    """Read ``num_frames`` indexed masks written by :func:`save_masks`."""
    root_path = Path(root_path)
    masks = []
    for frame_index in range(num_frames):
        path = root_path / FRAME_PATTERN.format(frame_index)
        try:
            mask_set = InstanceMaskSet.from_index_map(
                read_index_image(path), num_channels, active_count, instance_ids
            )
        except DataValidationError as exc:
            raise DataValidationError(f'{path}: {exc}') from exc
        masks.append(mask_set)
    return masks


# Tubes and metadata

def tubes_to_json(tubes):
    return {
        'width': tubes.width,
        'height': tubes.height,
        'frames': {
            str(frame_index): {str(instance_id): list(box) for instance_id, box in sorted(frame.items())}
            for frame_index, frame in enumerate(tubes.boxes)
        },
    }


def tubes_from_json(payload, num_frames):
    frames = payload.get('frames', {})
    boxes = [
        {int(instance_id): tuple(box) for instance_id, box in frames.get(str(frame_index), {}).items()}
        for frame_index in range(num_frames)
    ]
    return BoxTube(boxes, int(payload['width']), int(payload['height']))


def write_json(payload, path):
    path = Path(path)
    _ensure_dir(path.parent)
    try:
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + '\n')
    except OSError as exc:
        raise SequenceIOError(f'Cannot write {path}: {exc}', path=path) from exc


def read_json(path):
    path = _require(path)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataValidationError(f'{path} is not valid JSON: {exc}') from exc


def read_meta(path):
    from .serializers import SequenceMetaSerializer

    serializer = SequenceMetaSerializer(data=read_json(path))
    if not serializer.is_valid():
        raise DataValidationError(f'{path}: {serializer.errors}')
    return serializer.validated_data


# Sequences

def save_sequence(seq, root_path):
    """Write a whole sequence in the dataset layout."""
    seq_dir = Path(root_path) / seq.sequence_id
    for frame_index, frame in enumerate(seq.frames):
        write_frame(frame, seq_dir / 'frames' / FRAME_PATTERN.format(frame_index))
    save_masks(seq.gt_masks, seq_dir / 'masks')
    for frame_index, flow in enumerate(seq.flows_fwd):
        write_flo(flow, seq_dir / 'flow_fwd' / FLOW_PATTERN.format(frame_index))
    for frame_index, flow in enumerate(seq.flows_bwd):
        write_flo(flow, seq_dir / 'flow_bwd' / FLOW_PATTERN.format(frame_index))
    write_json(tubes_to_json(seq.tubes), seq_dir / 'tubes.json')
    write_json(
        {
            'sequence_id': seq.sequence_id,
            'num_frames': seq.num_frames,
            'num_instances': seq.active_count,
            'num_channels': seq.num_channels,
            'height': seq.height,
            'width': seq.width,
            'categories': {str(k): v for k, v in sorted(seq.category_labels.items())},
        },
        seq_dir / 'meta.json',
    )
    return seq_dir


def load_sequence(root_path, sequence_id, num_channels=None):
    """Load and validate one sequence from the dataset layout."""
    seq_dir = Path(root_path) / sequence_id
    meta = read_meta(seq_dir / 'meta.json')
    num_frames = meta['num_frames']
    active_count = meta['num_instances']
    num_channels = num_channels or meta.get('num_channels') or DEFAULT_NUM_CHANNELS
    if active_count > num_channels:
        raise DataValidationError(
            f'{sequence_id} has {active_count} instances but only N={num_channels} channels.'
        )
    frames = [
        read_frame(seq_dir / 'frames' / FRAME_PATTERN.format(t), t) for t in range(num_frames)
    ]
    masks = load_masks(seq_dir / 'masks', num_frames, num_channels, active_count)
    flows_fwd = [
        read_flo(seq_dir / 'flow_fwd' / FLOW_PATTERN.format(t), 'forward') for t in range(num_frames - 1)
    ]
    flows_bwd = [
        read_flo(seq_dir / 'flow_bwd' / FLOW_PATTERN.format(t), 'backward') for t in range(num_frames - 1)
    ]
    tubes = tubes_from_json(read_json(seq_dir / 'tubes.json'), num_frames)
    categories = {int(k): v for k, v in meta.get('categories', {}).items()}
    logger.debug('Loaded %s: T=%d M=%d N=%d', sequence_id, num_frames, active_count, num_channels)
    return VideoSequence(sequence_id, frames, masks, flows_fwd, flows_bwd, tubes, categories)


def load_sequences(root_path, sequence_ids, num_channels=None, workers=1):
    """Load several sequences; distinct sequences are read concurrently."""
    if workers <= 1:
        return [load_sequence(root_path, s, num_channels) for s in sequence_ids]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda s: load_sequence(root_path, s, num_channels), sequence_ids))


def write_splits(splits, root_path):
    write_json({name: list(splits.get(name, [])) for name in SPLIT_NAMES}, Path(root_path) / 'splits.json')


def read_splits(root_path):
    payload = read_json(Path(root_path) / 'splits.json')
    unknown = set(payload) - set(SPLIT_NAMES)
    if unknown:
        raise DataValidationError(f'splits.json has unknown splits {sorted(unknown)}.')
    return {name: list(payload.get(name, [])) for name in SPLIT_NAMES}
