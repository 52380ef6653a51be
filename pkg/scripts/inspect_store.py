import argparse

from sbauth.store import RECORD_SIZE, load_store

""" Prints shard and record statistics of a store file.

Usage:
    inspect_store.py <store_file> [--id ID]
"""


if __name__ == '__main__':
    parser = argparse.ArgumentParser()
    parser.add_argument('store_file')
    parser.add_argument('--id', type=int, help='also list the digests of this identity')
    args = parser.parse_args()

    store = load_store(args.store_file)
    print(f'identities: {store.enrolled_count()}')
    print(f'shards:     {store.shard_count()}')
    for index, shard in enumerate(store.shards):
        print(f'    shard {index}: {len(shard)}/{shard.capacity} identities, {shard.record_count()} records')
    records = store.record_count()
    print(f'records:    {records} ({records * RECORD_SIZE} bytes)')
    if store.enrolled_count():
        print(f'bytes per identity: {records * RECORD_SIZE / store.enrolled_count():.1f}')

    if args.id is not None:
        for digest in store.digests_of(args.id):
            print(digest.hex())
