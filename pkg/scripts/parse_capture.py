import argparse
from collections import Counter

from sbauth.transport import read_capture
from sbauth.wire import WireRequest, WireResponse

""" sbauth capture parsing example.

Usage:
    parse_capture.py <capture_file>
    parse_capture.py -h | --help
"""


if __name__ == '__main__':
    parser = argparse.ArgumentParser()
    parser.add_argument('capture_file')
    parser.add_argument('-v', '--verbose', action='store_true', help='print every record')
    args = parser.parse_args()

    # list of time, record tuples
    requests = []
    responses = []

    start_time = None
    for time, record in read_capture(args.capture_file):
        if start_time is None:
            start_time = time
        # normalise time
        if isinstance(record, WireRequest):
            requests.append((time - start_time, record))
        elif isinstance(record, WireResponse):
            responses.append((time - start_time, record))

        if args.verbose:
            print(f'{time - start_time:10.4f} {record}')

    print('Finished parsing records.')
    print('Requests:', len(requests))
    for op, count in sorted(Counter(r.op.value for _, r in requests).items()):
        print(f'    {op}: {count}')
    print('Responses:', len(responses))
    for status, count in sorted(Counter(r.status.value for _, r in responses).items()):
        print(f'    {status}: {count}')
