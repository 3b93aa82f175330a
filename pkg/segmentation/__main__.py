import os
import sys


def run():
    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'mainvos.settings')
    import django

    django.setup()
    from segmentation.cli import main

    return main()


if __name__ == '__main__':
    sys.exit(run())
