"""リポジトリ直下を import パスに入れて src パッケージを読めるようにする"""

import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
